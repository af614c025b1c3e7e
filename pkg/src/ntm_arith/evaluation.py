"""Generalization sweeps over operand length and memory-interaction traces.

The sweep harness speaks to anything exposing run(example) -> (T, 3) output
probabilities plus a task name, so its correctness is established with stub
runners (a perfect oracle and a deliberate one-bit saboteur) before any
trained network is involved.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import controller as ctl
from . import tasks
from .training import bits_per_sequence

REPORT_HEADER = "length,trials,mean_bits_error,std_bits_error"

DEFAULT_LENGTHS = (8, 10, 12, 16, 20, 24, 28, 32, 36, 42, 48)
DEFAULT_TRIALS = 100

TRACE_FILES = ("read_weights.csv", "write_weights.csv",
               "read_weights.pgm", "write_weights.pgm", "marker.txt")


class NetworkRunner:
    """Inference wrapper around a trained model; no graph is kept."""

    def __init__(self, model, task: str):
        self.model = model
        self.task = task

    def run(self, example: tasks.TaskExample) -> np.ndarray:
        with ad.no_grad():
            outputs, _ = ctl.run_episode(self.model, example)
        return np.stack([y.value for y in outputs])


class OracleStub:
    """Echoes the target exactly; calibrates the harness at zero error."""

    def __init__(self, task: str):
        self.task = task

    def run(self, example: tasks.TaskExample) -> np.ndarray:
        return example.targets.copy()


class SingleBitFlipStub:
    """Echoes the target with the first channel of the first output step
    inverted; calibrates the harness at exactly one bit of error."""

    def __init__(self, task: str):
        self.task = task

    def run(self, example: tasks.TaskExample) -> np.ndarray:
        out = example.targets.copy()
        out[0, 0] = 1.0 - out[0, 0]
        return out


@dataclass
class ReportRow:
    length: int
    trials: int
    mean_bits_error: float
    std_bits_error: float


def evaluate_generalization(runner, lengths, trials: int,
                            rng: np.random.Generator) -> list[ReportRow]:
    """Error statistics per operand length.

    Both operands are encoded over exactly `length` positions with values
    drawn uniformly below 2^length. Lengths beyond the number of memory rows
    are allowed; nothing stops the run, quality just degrades.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    rows = []
    for length in lengths:
        errors = np.empty(trials, dtype=np.float64)
        for i in range(trials):
            a = int(rng.integers(0, 1 << length))
            b = int(rng.integers(0, 1 << length))
            example = tasks.make_example(a, b, length, runner.task)
            pred = runner.run(example)
            errors[i] = bits_per_sequence(pred, example.targets)
        rows.append(ReportRow(length=int(length), trials=trials,
                              mean_bits_error=float(np.mean(errors)),
                              std_bits_error=float(np.std(errors))))
    return rows


def format_report(rows) -> str:
    lines = [REPORT_HEADER]
    for r in rows:
        lines.append(f"{r.length},{r.trials},{r.mean_bits_error!r},{r.std_bits_error!r}")
    return "\n".join(lines) + "\n"


def write_report(path, rows) -> None:
    with open(path, "w") as fh:
        fh.write(format_report(rows))


@dataclass
class MemoryTrace:
    """Read/write weightings over a whole episode, one row per timestep,
    plus the index of the step that consumed the input terminator."""

    read_weights: np.ndarray
    write_weights: np.ndarray
    input_end_index: int


def record_trace(model, example: tasks.TaskExample) -> MemoryTrace:
    with ad.no_grad():
        _, trace = ctl.run_episode(model, example, collect_weights=True)
    if trace is None:
        raise ValueError("model has no memory to trace")
    read_w, write_w = trace
    return MemoryTrace(read_weights=read_w, write_weights=write_w,
                       input_end_index=example.inputs.shape[0] - 1)


def _weights_to_pixels(w: np.ndarray) -> np.ndarray:
    # round-half-up so 0.5 maps to 128, full focus to 255, none to 0
    return np.floor(255.0 * np.clip(w, 0.0, 1.0) + 0.5).astype(np.uint8)


def write_pgm(path, w: np.ndarray) -> None:
    """Binary grayscale image of a (timesteps x N) weighting matrix.

    Time runs along the horizontal axis, memory rows along the vertical,
    white = fully focused, black = no interaction.
    """
    pixels = _weights_to_pixels(w).T
    height, width = pixels.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode())
        fh.write(pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5" or len(parts) != 4:
        raise ValueError(f"{path}: not a binary grayscale PGM")
    width, height = (int(t) for t in parts[1].split())
    if parts[2] != b"255":
        raise ValueError(f"{path}: expected 8-bit pixels")
    pixels = np.frombuffer(parts[3], dtype=np.uint8, count=width * height)
    return pixels.reshape(height, width)


def _write_weight_csv(path, w: np.ndarray) -> None:
    with open(path, "w") as fh:
        for row in w:
            fh.write(",".join(repr(float(x)) for x in row) + "\n")


def export_heatmap(trace: MemoryTrace, out_dir) -> list[str]:
    """Write the five trace files into out_dir; returns the paths written."""
    os.makedirs(out_dir, exist_ok=True)
    paths = [os.path.join(out_dir, name) for name in TRACE_FILES]
    _write_weight_csv(paths[0], trace.read_weights)
    _write_weight_csv(paths[1], trace.write_weights)
    write_pgm(paths[2], trace.read_weights)
    write_pgm(paths[3], trace.write_weights)
    with open(paths[4], "w") as fh:
        fh.write(f"{trace.input_end_index}\n")
    return paths
