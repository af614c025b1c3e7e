"""Controllers, head decoding, the composed memory cell, and checkpoints.

Three architectures share one parameter-store convention: every trainable
array is registered by dotted name into a single flat float64 buffer, and
graph leaves are views into that buffer, so one backward pass fills one flat
gradient vector ready for the optimizer.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from . import memory as mem_ops
from .memory import HeadParams, MemoryState
from .tasks import TaskExample

CONTROLLER_KINDS = ("ff", "lstm", "baseline")

# Floor added to the decoded key strength so it stays strictly positive even
# when softplus underflows.
STRENGTH_EPS = 1e-6

# Memory cells start at this constant after an episode reset: small enough to
# carry no information, large enough to keep row norms away from zero.
MEMORY_INIT = 1e-6

INIT_SCALE = 0.1

CHECKPOINT_MAGIC = b"NTMA"
CHECKPOINT_VERSION = 1

# Totals the three architectures are commonly sized to. The exact layout
# conventions behind these figures (head output arrangement, biases,
# trainable initial state) are not public; the implemented layouts land
# close but not equal, so callers report the difference instead of
# asserting a match.
REFERENCE_PARAM_COUNTS = {"ff": 15011, "lstm": 63011, "baseline": 333059}


@dataclass(frozen=True)
class ControllerSpec:
    kind: str
    hidden_size: int
    input_size: int = 3
    output_size: int = 3
    mem_rows: int = 128
    mem_cols: int = 20
    shift_width: int = 3
    num_layers: int = 1

    def __post_init__(self):
        if self.kind not in CONTROLLER_KINDS:
            raise ValueError(f"unknown controller kind {self.kind!r}")
        if self.shift_width % 2 != 1:
            raise ValueError(f"shift_width {self.shift_width} must be odd")
        if min(self.hidden_size, self.input_size, self.output_size) < 1:
            raise ValueError("sizes must be positive")
        if self.kind != "baseline" and min(self.mem_rows, self.mem_cols) < 1:
            raise ValueError("memory dimensions must be positive")


def default_spec(kind: str, mem_rows: int = 128, mem_cols: int = 20) -> ControllerSpec:
    """Stock sizes: hidden 100 for both memory-equipped controllers, a
    3-layer stack of 128 for the plain recurrent baseline."""
    if kind in ("ff", "lstm"):
        return ControllerSpec(kind=kind, hidden_size=100,
                              mem_rows=mem_rows, mem_cols=mem_cols)
    if kind == "baseline":
        return ControllerSpec(kind="baseline", hidden_size=128, num_layers=3,
                              mem_rows=0, mem_cols=0)
    raise ValueError(f"unknown controller kind {kind!r}")


class ParamStore:
    """Named float64 parameters packed into one flat buffer.

    Registration fixes the layout; freeze() allocates the value and gradient
    buffers and builds one leaf node per name whose value and grad are views
    into them. Backward therefore accumulates straight into `grads`.
    """

    def __init__(self):
        self._shapes: dict[str, tuple[int, ...]] = {}
        self._offsets: dict[str, int] = {}
        self.total = 0
        self.values: np.ndarray | None = None
        self.grads: np.ndarray | None = None
        self._leaves: dict[str, Node] = {}

    def register(self, name: str, shape) -> None:
        if self.values is not None:
            raise RuntimeError("ParamStore already frozen")
        if name in self._shapes:
            raise ValueError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        self._shapes[name] = shape
        self._offsets[name] = self.total
        self.total += math.prod(shape)

    def freeze(self, rng: np.random.Generator | None = None) -> None:
        if self.values is not None:
            raise RuntimeError("ParamStore already frozen")
        self.values = np.zeros(self.total, dtype=np.float64)
        self.grads = np.zeros(self.total, dtype=np.float64)
        if rng is not None:
            for name, shape in self._shapes.items():
                if not name.endswith(".b"):
                    off = self._offsets[name]
                    n = math.prod(shape)
                    self.values[off:off + n] = rng.uniform(-INIT_SCALE, INIT_SCALE, n)
        for name, shape in self._shapes.items():
            off = self._offsets[name]
            n = math.prod(shape)
            node = Node(self.values[off:off + n].reshape(shape))
            node.grad = self.grads[off:off + n].reshape(shape)
            self._leaves[name] = node

    def leaf(self, name: str) -> Node:
        return self._leaves[name]

    def zero_grad(self) -> None:
        self.grads[:] = 0.0

    def layout(self):
        """(name, offset, length) triples in registration order."""
        return [(name, self._offsets[name], math.prod(shape))
                for name, shape in self._shapes.items()]

    def shape_of(self, name: str) -> tuple[int, ...]:
        return self._shapes[name]

    def group_of(self, index: int) -> str:
        """Name of the parameter containing flat coordinate `index`."""
        for name, off, n in self.layout():
            if off <= index < off + n:
                return name
        raise IndexError(index)

    def bind_vector(self, vec: Node) -> None:
        """Route every leaf through a slice of one flat probe node.

        Meant for gradient checking: downstream graphs then propagate into
        the probe vector instead of this store's own gradient buffer.
        """
        if self.values is None:
            raise RuntimeError("ParamStore not frozen")
        if vec.value.shape != (self.total,):
            raise ad.ShapeError(
                f"bind_vector: expected shape ({self.total},), got {vec.value.shape}")
        self.values[:] = vec.value
        for name, off, _ in self.layout():
            shape = self._shapes[name]
            self._leaves[name] = ad.reshape(ad.slice1d(vec, off, off + math.prod(shape)),
                                            shape)


def _register_head(store: ParamStore, prefix: str, spec: ControllerSpec,
                   write: bool) -> None:
    h, m, s = spec.hidden_size, spec.mem_cols, spec.shift_width
    store.register(f"{prefix}.key.w", (m, h))
    store.register(f"{prefix}.key.b", (m,))
    store.register(f"{prefix}.strength.w", (h,))
    store.register(f"{prefix}.strength.b", ())
    store.register(f"{prefix}.gate.w", (h,))
    store.register(f"{prefix}.gate.b", ())
    store.register(f"{prefix}.shift.w", (s, h))
    store.register(f"{prefix}.shift.b", (s,))
    store.register(f"{prefix}.sharpness.w", (h,))
    store.register(f"{prefix}.sharpness.b", ())
    if write:
        store.register(f"{prefix}.erase.w", (m, h))
        store.register(f"{prefix}.erase.b", (m,))
        store.register(f"{prefix}.add.w", (m, h))
        store.register(f"{prefix}.add.b", (m,))


def _register_lstm(store: ParamStore, prefix: str, in_size: int, h: int) -> None:
    z = in_size + h
    for gate in ("wi", "wf", "wo", "wc"):
        store.register(f"{prefix}.{gate}", (h, z))
    for gate in ("bi", "bf", "bo", "bc"):
        store.register(f"{prefix}.{gate}", (h,))


def register_params(store: ParamStore, spec: ControllerSpec) -> None:
    h = spec.hidden_size
    if spec.kind == "baseline":
        in_size = spec.input_size
        for layer in range(1, spec.num_layers + 1):
            _register_lstm(store, f"layer{layer}", in_size, h)
            in_size = h
        store.register("output.w", (spec.output_size, h))
        store.register("output.b", (spec.output_size,))
        return

    ctrl_in = spec.input_size + spec.mem_cols
    if spec.kind == "ff":
        store.register("controller.w", (h, ctrl_in))
        store.register("controller.b", (h,))
    else:
        _register_lstm(store, "controller", ctrl_in, h)
    _register_head(store, "read", spec, write=False)
    _register_head(store, "write", spec, write=True)
    store.register("output.w", (spec.output_size, h))
    store.register("output.b", (spec.output_size,))
    store.register("init.read_weight", (spec.mem_rows,))
    store.register("init.write_weight", (spec.mem_rows,))
    store.register("init.read_vector", (spec.mem_cols,))


def param_count(spec: ControllerSpec):
    """Total trainable scalars plus a per-component breakdown.

    Components are the first dotted segment of each parameter name
    (controller, read, write, output, init, layer1..layerN).
    """
    store = ParamStore()
    register_params(store, spec)
    breakdown: dict[str, int] = {}
    for name, _, n in store.layout():
        group = name.split(".", 1)[0]
        breakdown[group] = breakdown.get(group, 0) + n
    return store.total, breakdown


def _affine(store: ParamStore, prefix: str, h: Node) -> Node:
    w = store.leaf(f"{prefix}.w")
    b = store.leaf(f"{prefix}.b")
    if w.value.ndim == 2:
        return ad.add(ad.matvec(w, h), b)
    return ad.add(ad.dot(w, h), b)


def ff_controller_step(x: Node, r_prev: Node, store: ParamStore) -> Node:
    """hidden = tanh(W concat(x, r_prev) + b)."""
    z = ad.concat([x, r_prev])
    return ad.tanh(_affine(store, "controller", z))


def lstm_step(x: Node, r_prev: Node | None, h_prev: Node, c_prev: Node,
              store: ParamStore, prefix: str = "controller"):
    """Standard gated cell over concat(x, r_prev, h_prev); returns (h, c)."""
    parts = [x] if r_prev is None else [x, r_prev]
    z = ad.concat(parts + [h_prev])

    def gate(w, b):
        return ad.add(ad.matvec(store.leaf(f"{prefix}.{w}"), z),
                      store.leaf(f"{prefix}.{b}"))

    i = ad.sigmoid(gate("wi", "bi"))
    f = ad.sigmoid(gate("wf", "bf"))
    o = ad.sigmoid(gate("wo", "bo"))
    cand = ad.tanh(gate("wc", "bc"))
    c = ad.add(ad.mul(f, c_prev), ad.mul(i, cand))
    h = ad.mul(o, ad.tanh(c))
    return h, c


def _decode_head(hidden: Node, store: ParamStore, prefix: str,
                 write: bool) -> HeadParams:
    key = _affine(store, f"{prefix}.key", hidden)
    strength = ad.add(ad.softplus(_affine(store, f"{prefix}.strength", hidden)),
                      STRENGTH_EPS)
    gate = ad.sigmoid(_affine(store, f"{prefix}.gate", hidden))
    shift = ad.softmax(_affine(store, f"{prefix}.shift", hidden))
    sharpness = ad.add(ad.softplus(_affine(store, f"{prefix}.sharpness", hidden)),
                       1.0)
    erase = add = None
    if write:
        erase = ad.sigmoid(_affine(store, f"{prefix}.erase", hidden))
        add = _affine(store, f"{prefix}.add", hidden)
    return HeadParams(key=key, strength=strength, gate=gate, shift=shift,
                      sharpness=sharpness, erase=erase, add=add)


def decode_heads(hidden: Node, store: ParamStore):
    """(read head, write head, output logits) from the controller state."""
    read_head = _decode_head(hidden, store, "read", write=False)
    write_head = _decode_head(hidden, store, "write", write=True)
    logits = _affine(store, "output", hidden)
    return read_head, write_head, logits


@dataclass
class CellState:
    """Per-episode recurrent state; everything here resets between episodes."""

    memory: MemoryState | None
    hidden: tuple[Node, ...] = ()
    cell: tuple[Node, ...] = ()
    step: int = 0


class NTM:
    """Memory-equipped model: controller, two heads, external matrix."""

    def __init__(self, spec: ControllerSpec, store: ParamStore):
        if spec.kind not in ("ff", "lstm"):
            raise ValueError(f"NTM requires ff or lstm controller, got {spec.kind!r}")
        self.spec = spec
        self.store = store

    def initial_state(self) -> CellState:
        spec, store = self.spec, self.store
        mem = ad.constant(np.full((spec.mem_rows, spec.mem_cols), MEMORY_INIT))
        memory = MemoryState(
            mem=mem,
            read_weight=ad.softmax(store.leaf("init.read_weight")),
            write_weight=ad.softmax(store.leaf("init.write_weight")),
            read_vector=store.leaf("init.read_vector"),
        )
        if spec.kind == "lstm":
            zeros = np.zeros(spec.hidden_size)
            return CellState(memory=memory,
                             hidden=(ad.constant(zeros),),
                             cell=(ad.constant(zeros.copy()),))
        return CellState(memory=memory)

    def step(self, state: CellState, x: Node):
        """One timestep: controller, decode, write, then read, then output."""
        store = self.store
        ms = state.memory
        if self.spec.kind == "ff":
            h = ff_controller_step(x, ms.read_vector, store)
            hidden = cell = ()
        else:
            h, c = lstm_step(x, ms.read_vector, state.hidden[0], state.cell[0],
                             store)
            hidden, cell = (h,), (c,)

        read_head, write_head, logits = decode_heads(h, store)
        ww = mem_ops.address(ms.mem, ms.write_weight, write_head)
        new_mem = mem_ops.memory_write(ms.mem, ww, write_head.erase,
                                       write_head.add)
        rw = mem_ops.address(new_mem, ms.read_weight, read_head)
        r = mem_ops.memory_read(new_mem, rw)
        y = ad.sigmoid(logits)

        new_state = CellState(
            memory=MemoryState(mem=new_mem, read_weight=rw, write_weight=ww,
                               read_vector=r),
            hidden=hidden, cell=cell, step=state.step + 1)
        return y, new_state


class StackedLSTM:
    """Plain recurrent baseline: stacked gated layers, no external memory."""

    def __init__(self, spec: ControllerSpec, store: ParamStore):
        if spec.kind != "baseline":
            raise ValueError(f"StackedLSTM requires baseline kind, got {spec.kind!r}")
        self.spec = spec
        self.store = store

    def initial_state(self) -> CellState:
        zeros = [ad.constant(np.zeros(self.spec.hidden_size))
                 for _ in range(2 * self.spec.num_layers)]
        n = self.spec.num_layers
        return CellState(memory=None, hidden=tuple(zeros[:n]),
                         cell=tuple(zeros[n:]))

    def step(self, state: CellState, x: Node):
        hs, cs = [], []
        inp = x
        for layer in range(1, self.spec.num_layers + 1):
            h, c = lstm_step(inp, None, state.hidden[layer - 1],
                             state.cell[layer - 1], self.store,
                             prefix=f"layer{layer}")
            hs.append(h)
            cs.append(c)
            inp = h
        y = ad.sigmoid(_affine(self.store, "output", inp))
        return y, CellState(memory=None, hidden=tuple(hs), cell=tuple(cs),
                            step=state.step + 1)


def baseline_step(x: Node, state: CellState, model: StackedLSTM):
    return model.step(state, x)


def build_model(spec: ControllerSpec, seed: int | None = None,
                store: ParamStore | None = None):
    """Fresh model with registered (and, given a seed, initialized) params."""
    if store is None:
        store = ParamStore()
        register_params(store, spec)
        store.freeze(np.random.default_rng(seed))
    if spec.kind == "baseline":
        return StackedLSTM(spec, store)
    return NTM(spec, store)


def run_episode(model, example: TaskExample, collect_weights: bool = False):
    """Full episode: present the input rows, then emit one output per target
    row while feeding zero vectors.

    Returns (outputs, trace) where outputs is the list of output nodes for
    the emission phase and trace is None unless collect_weights is set, in
    which case it is a pair of (timesteps x N) arrays of read and write
    weightings covering both phases.
    """
    state = model.initial_state()
    read_rows, write_rows = [], []

    def snap():
        if collect_weights and state.memory is not None:
            read_rows.append(state.memory.read_weight.value.copy())
            write_rows.append(state.memory.write_weight.value.copy())

    for row in example.inputs:
        _, state = model.step(state, ad.constant(row))
        snap()

    outputs = []
    zero = np.zeros(example.inputs.shape[1])
    for _ in range(example.targets.shape[0]):
        y, state = model.step(state, ad.constant(zero))
        snap()
        outputs.append(y)

    trace = None
    if collect_weights and read_rows:
        trace = (np.stack(read_rows), np.stack(write_rows))
    return outputs, trace


# ---------------------------------------------------------------------------
# checkpoint serialization


def _spec_to_manifest(spec: ControllerSpec, task: str, seed: int,
                      opt_step: int, store: ParamStore) -> str:
    lines = [
        f"kind {spec.kind}",
        f"hidden {spec.hidden_size}",
        f"input {spec.input_size}",
        f"output {spec.output_size}",
        f"mem_rows {spec.mem_rows}",
        f"mem_cols {spec.mem_cols}",
        f"shift_width {spec.shift_width}",
        f"layers {spec.num_layers}",
        f"task {task}",
        f"seed {seed}",
        f"opt_step {opt_step}",
    ]
    for name, off, n in store.layout():
        lines.append(f"layout {name} {off} {n}")
    return "\n".join(lines) + "\n"


def save_checkpoint(path, spec: ControllerSpec, task: str, seed: int,
                    store: ParamStore, sq_avg: np.ndarray,
                    opt_step: int) -> None:
    """Binary dump: magic, u32 version, length-prefixed text manifest, then
    the parameter and optimizer buffers as little-endian f64."""
    manifest = _spec_to_manifest(spec, task, seed, opt_step, store).encode()
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(struct.pack("<I", len(manifest)))
    buf.write(manifest)
    buf.write(store.values.astype("<f8").tobytes())
    buf.write(np.asarray(sq_avg, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Inverse of save_checkpoint.

    Returns (model, task, seed, sq_avg, opt_step). The stored layout is
    checked against the layout rebuilt from the manifest's dimensions so
    silent corruption or version skew fails loudly.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint file")
    version, = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    mlen, = struct.unpack_from("<I", raw, 8)
    manifest = raw[12:12 + mlen].decode()

    fields: dict[str, str] = {}
    layout = []
    for line in manifest.splitlines():
        key, rest = line.split(" ", 1)
        if key == "layout":
            name, off, n = rest.rsplit(" ", 2)
            layout.append((name, int(off), int(n)))
        else:
            fields[key] = rest

    spec = ControllerSpec(
        kind=fields["kind"],
        hidden_size=int(fields["hidden"]),
        input_size=int(fields["input"]),
        output_size=int(fields["output"]),
        mem_rows=int(fields["mem_rows"]),
        mem_cols=int(fields["mem_cols"]),
        shift_width=int(fields["shift_width"]),
        num_layers=int(fields["layers"]),
    )
    store = ParamStore()
    register_params(store, spec)
    if store.layout() != layout:
        raise ValueError(f"{path}: parameter layout does not match its manifest")

    body = raw[12 + mlen:]
    expected = 2 * store.total * 8
    if len(body) != expected:
        raise ValueError(f"{path}: expected {expected} payload bytes, found {len(body)}")
    arrays = np.frombuffer(body, dtype="<f8")
    store.freeze()
    store.values[:] = arrays[:store.total]
    sq_avg = arrays[store.total:].astype(np.float64).copy()

    model = build_model(spec, store=store)
    return model, fields["task"], int(fields["seed"]), sq_avg, int(fields["opt_step"])
