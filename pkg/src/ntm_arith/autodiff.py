"""Reverse-mode automatic differentiation over small dense float64 tensors.

Graphs are built dynamically: each primitive records its input nodes and a
backward rule, and `backward` replays the rules once in reverse topological
order. Everything is numpy float64 and single-threaded per graph; tensors
stay small (vectors and matrices of a few thousand entries at most), so the
implementation favours clarity over batching tricks.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

# Guard added to the cosine-similarity denominator so a zero-norm argument
# (e.g. near-empty memory rows) stays defined and finite.
COSINE_EPS = 1e-8

_grad_enabled = True


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class GradientError(RuntimeError):
    """Backward-pass misuse, or a non-finite value met during a gradient check."""


class no_grad:
    """Context manager that disables graph recording (forward values only)."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, exc_type, exc, tb):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Node:
    """One value in the computation graph plus its gradient slot.

    `value` and `grad` are float64 arrays of the same shape (grad is
    allocated lazily on first accumulation; parameter leaves get views into
    a flat gradient buffer assigned externally).
    """

    __slots__ = ("value", "grad", "parents", "rule", "_backward_done")

    def __init__(self, value, parents=()):
        if isinstance(value, np.ndarray) and value.dtype == np.float64:
            self.value = value
        else:
            self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents if _grad_enabled else ()
        self.rule = None
        self._backward_done = False

    # Arithmetic sugar so model code reads like the math.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_node(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __repr__(self):
        return f"Node(shape={self.value.shape})"


def constant(value) -> Node:
    """Leaf node that takes part in the graph but is not trained."""
    return Node(value)


def _as_node(x) -> Node:
    return x if isinstance(x, Node) else Node(np.asarray(x, dtype=np.float64))


def _conform(name, a, b):
    # Equal shapes, or either side a scalar (0-d) that broadcasts.
    if a.value.shape == b.value.shape or a.value.ndim == 0 or b.value.ndim == 0:
        return
    raise ShapeError(
        f"{name}: shapes {a.value.shape} and {b.value.shape} do not conform"
    )


def _unbroadcast(g, shape):
    # Reduce a broadcast gradient back to the scalar operand's shape.
    if g.shape == shape:
        return g
    return np.asarray(np.sum(g))


def _accum(node, g):
    if node.grad is None:
        node.grad = np.array(g, dtype=np.float64)
    else:
        node.grad += g


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _conform("add", a, b)
    out = Node(a.value + b.value, (a, b))
    if _grad_enabled:
        def rule(g):
            _accum(a, _unbroadcast(g, a.value.shape))
            _accum(b, _unbroadcast(g, b.value.shape))
        out.rule = rule
    return out


def sub(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _conform("sub", a, b)
    out = Node(a.value - b.value, (a, b))
    if _grad_enabled:
        def rule(g):
            _accum(a, _unbroadcast(g, a.value.shape))
            _accum(b, _unbroadcast(-g, b.value.shape))
        out.rule = rule
    return out


def mul(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _conform("mul", a, b)
    out = Node(a.value * b.value, (a, b))
    if _grad_enabled:
        def rule(g):
            _accum(a, _unbroadcast(g * b.value, a.value.shape))
            _accum(b, _unbroadcast(g * a.value, b.value.shape))
        out.rule = rule
    return out


def div(a, b) -> Node:
    a, b = _as_node(a), _as_node(b)
    _conform("div", a, b)
    if np.any(b.value == 0.0):
        raise ValueError("div: zero entry in denominator")
    out = Node(a.value / b.value, (a, b))
    if _grad_enabled:
        def rule(g):
            _accum(a, _unbroadcast(g / b.value, a.value.shape))
            _accum(b, _unbroadcast(-g * a.value / (b.value * b.value), b.value.shape))
        out.rule = rule
    return out


# ---------------------------------------------------------------------------
# linear algebra


def dot(u, v) -> Node:
    u, v = _as_node(u), _as_node(v)
    if u.value.ndim != 1 or u.value.shape != v.value.shape:
        raise ShapeError(f"dot: shapes {u.value.shape} and {v.value.shape}")
    out = Node(np.asarray(np.dot(u.value, v.value)), (u, v))
    if _grad_enabled:
        def rule(g):
            _accum(u, g * v.value)
            _accum(v, g * u.value)
        out.rule = rule
    return out


def matvec(a, x) -> Node:
    a, x = _as_node(a), _as_node(x)
    if a.value.ndim != 2 or x.value.ndim != 1 or a.value.shape[1] != x.value.shape[0]:
        raise ShapeError(f"matvec: shapes {a.value.shape} and {x.value.shape}")
    out = Node(a.value @ x.value, (a, x))
    if _grad_enabled:
        def rule(g):
            _accum(a, np.outer(g, x.value))
            _accum(x, a.value.T @ g)
        out.rule = rule
    return out


def vecmat(x, a) -> Node:
    """Row-vector by matrix product: (n,) @ (n, m) -> (m,)."""
    x, a = _as_node(x), _as_node(a)
    if a.value.ndim != 2 or x.value.ndim != 1 or a.value.shape[0] != x.value.shape[0]:
        raise ShapeError(f"vecmat: shapes {x.value.shape} and {a.value.shape}")
    out = Node(x.value @ a.value, (x, a))
    if _grad_enabled:
        def rule(g):
            _accum(x, a.value @ g)
            _accum(a, np.outer(x.value, g))
        out.rule = rule
    return out


def outer(u, v) -> Node:
    u, v = _as_node(u), _as_node(v)
    if u.value.ndim != 1 or v.value.ndim != 1:
        raise ShapeError(f"outer: shapes {u.value.shape} and {v.value.shape}")
    out = Node(np.outer(u.value, v.value), (u, v))
    if _grad_enabled:
        def rule(g):
            _accum(u, g @ v.value)
            _accum(v, u.value @ g)
        out.rule = rule
    return out


def concat(parts) -> Node:
    parts = [_as_node(p) for p in parts]
    for p in parts:
        if p.value.ndim != 1:
            raise ShapeError(f"concat: expected 1-d parts, got shape {p.value.shape}")
    out = Node(np.concatenate([p.value for p in parts]), tuple(parts))
    if _grad_enabled:
        sizes = [p.value.shape[0] for p in parts]

        def rule(g):
            off = 0
            for p, n in zip(parts, sizes):
                _accum(p, g[off:off + n])
                off += n
        out.rule = rule
    return out


def slice1d(x, start, stop) -> Node:
    x = _as_node(x)
    if x.value.ndim != 1 or not (0 <= start <= stop <= x.value.shape[0]):
        raise ShapeError(f"slice1d: [{start}:{stop}] of shape {x.value.shape}")
    out = Node(x.value[start:stop], (x,))
    if _grad_enabled:
        def rule(g):
            full = np.zeros_like(x.value)
            full[start:stop] = g
            _accum(x, full)
        out.rule = rule
    return out


def reshape(x, shape) -> Node:
    x = _as_node(x)
    out = Node(x.value.reshape(shape), (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, g.reshape(x.value.shape))
        out.rule = rule
    return out


# ---------------------------------------------------------------------------
# nonlinearities


def sigmoid(x) -> Node:
    x = _as_node(x)
    s = expit(x.value)
    out = Node(s, (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, g * s * (1.0 - s))
        out.rule = rule
    return out


def tanh(x) -> Node:
    x = _as_node(x)
    t = np.tanh(x.value)
    out = Node(t, (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, g * (1.0 - t * t))
        out.rule = rule
    return out


def softplus(x) -> Node:
    x = _as_node(x)
    out = Node(np.logaddexp(0.0, x.value), (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, g * expit(x.value))
        out.rule = rule
    return out


def exp(x) -> Node:
    x = _as_node(x)
    e = np.exp(x.value)
    out = Node(e, (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, g * e)
        out.rule = rule
    return out


def log(x) -> Node:
    x = _as_node(x)
    if np.any(x.value <= 0.0):
        raise ValueError("log: nonpositive argument")
    out = Node(np.log(x.value), (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, g / x.value)
        out.rule = rule
    return out


def power(x, p) -> Node:
    """Elementwise x**p for x >= 0; p may be a scalar node (trainable exponent).

    At x == 0 the exponent gradient uses the limit value 0, which requires
    p >= 1 there; that is the regime the sharpening step operates in.
    """
    x, p = _as_node(x), _as_node(p)
    if p.value.ndim != 0:
        raise ShapeError(f"power: exponent must be scalar, got shape {p.value.shape}")
    if np.any(x.value < 0.0):
        raise ValueError("power: negative base")
    y = x.value ** p.value
    out = Node(y, (x, p))
    if _grad_enabled:
        def rule(g):
            _accum(x, g * p.value * x.value ** (p.value - 1.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                lnx = np.where(x.value > 0.0, np.log(np.where(x.value > 0.0, x.value, 1.0)), 0.0)
            _accum(p, np.asarray(np.sum(g * y * lnx)))
        out.rule = rule
    return out


def clip(x, lo, hi) -> Node:
    """Clamp to [lo, hi]; gradient passes through inside the interval only."""
    x = _as_node(x)
    out = Node(np.clip(x.value, lo, hi), (x,))
    if _grad_enabled:
        inside = (x.value >= lo) & (x.value <= hi)

        def rule(g):
            _accum(x, g * inside)
        out.rule = rule
    return out


# ---------------------------------------------------------------------------
# reductions and similarity


def sum_reduce(x) -> Node:
    x = _as_node(x)
    out = Node(np.asarray(np.sum(x.value)), (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, np.broadcast_to(g, x.value.shape))
        out.rule = rule
    return out


def softmax(x) -> Node:
    x = _as_node(x)
    if x.value.ndim != 1:
        raise ShapeError(f"softmax: expected 1-d input, got shape {x.value.shape}")
    z = x.value - np.max(x.value)
    e = np.exp(z)
    y = e / np.sum(e)
    out = Node(y, (x,))
    if _grad_enabled:
        def rule(g):
            _accum(x, y * (g - np.dot(g, y)))
        out.rule = rule
    return out


def cosine_similarity(u, v) -> Node:
    """cos(u, v) with an epsilon-guarded denominator, as a scalar node."""
    u, v = _as_node(u), _as_node(v)
    if u.value.ndim != 1 or u.value.shape != v.value.shape:
        raise ShapeError(
            f"cosine_similarity: shapes {u.value.shape} and {v.value.shape}"
        )
    un = np.linalg.norm(u.value)
    vn = np.linalg.norm(v.value)
    d = un * vn + COSINE_EPS
    s = np.dot(u.value, v.value)
    out = Node(np.asarray(s / d), (u, v))
    if _grad_enabled:
        # d(|u|)/du is taken as 0 at u = 0 (subgradient choice).
        un_safe = max(un, 1e-300)
        vn_safe = max(vn, 1e-300)

        def rule(g):
            _accum(u, g * (v.value / d - (s * vn / (un_safe * d * d)) * u.value))
            _accum(v, g * (u.value / d - (s * un / (vn_safe * d * d)) * v.value))
        out.rule = rule
    return out


def cosine_rows(m, k) -> Node:
    """Cosine similarity of every row of m against k, fused into one op."""
    m, k = _as_node(m), _as_node(k)
    if m.value.ndim != 2 or k.value.ndim != 1 or m.value.shape[1] != k.value.shape[0]:
        raise ShapeError(f"cosine_rows: shapes {m.value.shape} and {k.value.shape}")
    rn = np.linalg.norm(m.value, axis=1)
    kn = np.linalg.norm(k.value)
    d = rn * kn + COSINE_EPS
    s = m.value @ k.value
    out = Node(s / d, (m, k))
    if _grad_enabled:
        rn_safe = np.maximum(rn, 1e-300)
        kn_safe = max(kn, 1e-300)

        def rule(g):
            gd = g / d
            _accum(m, np.outer(gd, k.value)
                   - ((g * s * kn) / (rn_safe * d * d))[:, None] * m.value)
            _accum(k, m.value.T @ gd - (np.dot(g, s * rn / (d * d)) / kn_safe) * k.value)
        out.rule = rule
    return out


def circular_conv(w, s) -> Node:
    """Circular convolution of w (length n) with a centred shift kernel s.

    The kernel covers offsets -(S//2) .. +(S//2) for odd S <= n, and the
    output at position i is sum_o s(o) * w(i - o) with wraparound indexing.
    """
    w, s = _as_node(w), _as_node(s)
    if w.value.ndim != 1 or s.value.ndim != 1:
        raise ShapeError(f"circular_conv: shapes {w.value.shape} and {s.value.shape}")
    width = s.value.shape[0]
    n = w.value.shape[0]
    if width % 2 != 1:
        raise ShapeError(f"circular_conv: kernel length {width} must be odd")
    if width > n:
        raise ShapeError(f"circular_conv: kernel length {width} exceeds vector length {n}")
    half = width // 2
    offsets = range(-half, half + 1)
    y = np.zeros_like(w.value)
    for idx, off in enumerate(offsets):
        y += s.value[idx] * np.roll(w.value, off)
    out = Node(y, (w, s))
    if _grad_enabled:
        def rule(g):
            gw = np.zeros_like(w.value)
            gs = np.empty_like(s.value)
            for idx, off in enumerate(offsets):
                gw += s.value[idx] * np.roll(g, -off)
                gs[idx] = np.dot(g, np.roll(w.value, off))
            _accum(w, gw)
            _accum(s, gs)
        out.rule = rule
    return out


# ---------------------------------------------------------------------------
# backward pass


def _toposort(root):
    # Iterative postorder DFS. A node is appended only once all its parents
    # are done, so the reversed order runs each rule after every consumer of
    # that node has contributed its gradient. Marking at pop (not push) time
    # keeps diamond-shaped graphs ordered correctly.
    order = []
    done = set()
    stack = [(root, False)]
    while stack:
        node, ready = stack.pop()
        if node in done:
            continue
        if ready:
            done.add(node)
            order.append(node)
            continue
        stack.append((node, True))
        for p in node.parents:
            if p not in done:
                stack.append((p, False))
    return order


def backward(loss: Node):
    """Accumulate d(loss)/d(node) into .grad for every ancestor of loss.

    The loss must be scalar, and the same graph cannot be differentiated
    twice (gradients would double-accumulate); rebuild the graph instead.
    """
    if loss.value.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")
    if loss._backward_done:
        raise GradientError("backward: graph already differentiated once; rebuild it")
    loss._backward_done = True
    order = _toposort(loss)
    _accum(loss, np.ones_like(loss.value))
    for node in reversed(order):
        if node.rule is not None and node.grad is not None:
            node.rule(node.grad)


def gradient_check(f, theta, step=1e-5):
    """Compare analytic and central-difference gradients of a scalar function.

    f takes a 1-d parameter Node and returns a scalar Node. Returns the worst
    coordinate's relative error |analytic - numeric| / max(1, |analytic| + |numeric|).
    """
    theta = np.asarray(theta, dtype=np.float64).ravel()
    leaf = Node(theta.copy())
    out = f(leaf)
    if out.value.size != 1:
        raise ShapeError(f"gradient_check: f returned shape {out.value.shape}")
    backward(out)
    if leaf.grad is None:
        analytic = np.zeros_like(theta)
    else:
        analytic = np.asarray(leaf.grad, dtype=np.float64).ravel().copy()
    bad = np.flatnonzero(~np.isfinite(analytic))
    if bad.size:
        raise GradientError(f"gradient_check: non-finite analytic gradient at coordinate {bad[0]}")

    worst = 0.0
    for i in range(theta.size):
        probes = []
        for sign in (1.0, -1.0):
            pert = theta.copy()
            pert[i] += sign * step
            with no_grad():
                val = float(f(Node(pert)).value)
            if not np.isfinite(val):
                raise GradientError(f"gradient_check: non-finite value at coordinate {i}")
            probes.append(val)
        numeric = (probes[0] - probes[1]) / (2.0 * step)
        err = abs(analytic[i] - numeric) / max(1.0, abs(analytic[i]) + abs(numeric))
        worst = max(worst, err)
    return worst
