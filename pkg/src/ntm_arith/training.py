"""Online training loop: summed binary cross entropy, RMSProp, curve output.

One example is one episode: state fully resets, the whole episode is unrolled,
and a single gradient step follows. Everything is driven by one seeded RNG so
a (seed, config) pair reproduces its curve byte for byte.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from . import controller as ctl
from . import tasks

RMSPROP_EPS = 1e-8
BCE_CLAMP = 1e-12

CURVE_HEADER = "example_index,bce_loss,bits_per_seq_window_mean"


class TrainingError(RuntimeError):
    """Raised when training hits a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    task: str = "add"
    controller: str = "ff"
    learning_rate: float = 1e-4
    rmsprop_decay: float = 0.95
    example_count: int = 1_000_000
    max_bits: int = 8
    mem_rows: int = 128
    mem_cols: int = 20
    clip_bound: float = 10.0
    curve_window: int = 1000
    seed: int = 0
    checkpoint_path: str | None = None
    curve_path: str | None = None
    checkpoint_every: int = 10_000
    log_every: int = 0

    def __post_init__(self):
        if self.task not in tasks.KINDS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.controller not in ctl.CONTROLLER_KINDS:
            raise ValueError(f"unknown controller {self.controller!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.rmsprop_decay < 1:
            raise ValueError("rmsprop_decay must lie in (0, 1)")
        if self.example_count < 0:
            raise ValueError("example_count must be nonnegative")
        if self.max_bits < 1:
            raise ValueError("max_bits must be positive")
        if self.clip_bound <= 0:
            raise ValueError("clip_bound must be positive")
        if self.curve_window < 1:
            raise ValueError("curve_window must be positive")

    def spec(self) -> ctl.ControllerSpec:
        return ctl.default_spec(self.controller, mem_rows=self.mem_rows,
                                mem_cols=self.mem_cols)


@dataclass
class OptimizerState:
    sq_avg: np.ndarray
    step: int = 0


def bce_loss(outputs: list[Node], targets: np.ndarray) -> Node:
    """Summed binary cross entropy over all emission steps and channels.

    Predictions are clamped away from {0, 1} so the logs stay finite; the
    clamp is inside the graph, so saturated outputs get zero gradient.
    """
    if len(outputs) != targets.shape[0]:
        raise ValueError(
            f"bce_loss: {len(outputs)} predictions vs {targets.shape[0]} target rows")
    total = None
    for y, t in zip(outputs, targets):
        p = ad.clip(y, BCE_CLAMP, 1.0 - BCE_CLAMP)
        term = ad.add(
            ad.mul(ad.constant(t), ad.log(p)),
            ad.mul(ad.constant(1.0 - t), ad.log(ad.sub(1.0, p))),
        )
        s = ad.sum_reduce(term)
        total = s if total is None else ad.add(total, s)
    return ad.mul(total, -1.0)


def bits_per_sequence(outputs, targets: np.ndarray) -> int:
    """Thresholded channel-bits differing from the target, terminator row
    excluded (the metric counts number elements only)."""
    if len(outputs) != targets.shape[0]:
        raise ValueError(
            f"bits_per_sequence: {len(outputs)} predictions vs "
            f"{targets.shape[0]} target rows")
    errors = 0
    for y, t in zip(outputs[:-1], targets[:-1]):
        v = y.value if isinstance(y, Node) else np.asarray(y)
        errors += int(np.sum((v >= 0.5).astype(np.int64) != t.astype(np.int64)))
    return errors


def rmsprop_step(values: np.ndarray, grads: np.ndarray, opt: OptimizerState,
                 learning_rate: float, decay: float,
                 clip_bound: float) -> None:
    """In-place update: clip, accumulate squared-gradient average, step.

    The clipped gradient feeds the running average as well, so one outlier
    episode cannot poison the denominator.
    """
    g = np.clip(grads, -clip_bound, clip_bound)
    opt.sq_avg *= decay
    opt.sq_avg += (1.0 - decay) * g * g
    values -= learning_rate * g / np.sqrt(opt.sq_avg + RMSPROP_EPS)
    opt.step += 1


@dataclass
class TrainResult:
    model: object
    optimizer: OptimizerState
    curve: list[tuple[int, float, float]] = field(default_factory=list)


def format_curve(curve) -> str:
    # repr() keeps every float's shortest exact form, so identical runs
    # produce byte-identical files.
    lines = [CURVE_HEADER]
    for idx, loss, window in curve:
        lines.append(f"{idx},{float(loss)!r},{float(window)!r}")
    return "\n".join(lines) + "\n"


def write_curve(path, curve) -> None:
    with open(path, "w") as fh:
        fh.write(format_curve(curve))


def train(config: TrainConfig) -> TrainResult:
    """Run the online loop; returns the model, optimizer state, and curve.

    The curve holds one record per example: its index, its episode loss, and
    the running mean of bits_per_sequence over the trailing window.
    """
    spec = config.spec()
    model = ctl.build_model(spec, seed=config.seed)
    store = model.store
    opt = OptimizerState(sq_avg=np.zeros(store.total))
    rng = np.random.default_rng(config.seed)
    window: deque[int] = deque(maxlen=config.curve_window)
    curve: list[tuple[int, float, float]] = []

    def checkpoint():
        if config.checkpoint_path is not None:
            ctl.save_checkpoint(config.checkpoint_path, spec, config.task,
                                config.seed, store, opt.sq_avg, opt.step)

    for idx in range(config.example_count):
        example = tasks.sample_example(rng, config.max_bits, config.task)
        outputs, _ = ctl.run_episode(model, example)
        loss = bce_loss(outputs, example.targets)
        loss_val = float(loss.value)
        if not np.isfinite(loss_val):
            checkpoint()
            raise TrainingError(f"non-finite loss at example {idx}")

        store.zero_grad()
        ad.backward(loss)
        bad = np.flatnonzero(~np.isfinite(store.grads))
        if bad.size:
            checkpoint()
            raise TrainingError(
                f"non-finite gradient at example {idx} in parameter "
                f"{store.group_of(int(bad[0]))!r}")
        rmsprop_step(store.values, store.grads, opt, config.learning_rate,
                     config.rmsprop_decay, config.clip_bound)

        window.append(bits_per_sequence(outputs, example.targets))
        curve.append((idx, loss_val, float(np.mean(window))))
        if config.log_every and (idx + 1) % config.log_every == 0:
            print(f"example {idx + 1}/{config.example_count} "
                  f"loss {loss_val:.3f} window_bits {np.mean(window):.3f}",
                  flush=True)
        if config.checkpoint_every and (idx + 1) % config.checkpoint_every == 0:
            checkpoint()

    checkpoint()
    if config.curve_path is not None:
        write_curve(config.curve_path, curve)
    return TrainResult(model=model, optimizer=opt, curve=curve)
