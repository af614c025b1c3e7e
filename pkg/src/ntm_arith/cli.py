"""Command-line entry point: dataset generation, training, evaluation, tracing.

Flag resolution order is explicit flag, then `--config` file entry (key=value
lines), then built-in default. Every command prints its fully resolved
configuration on one line before doing any work, so a run can be reproduced
from its log alone.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import controller as ctl
from . import evaluation as evl
from . import tasks
from . import training


def _parse_lengths(text: str) -> tuple[int, ...]:
    try:
        values = tuple(int(t) for t in text.split(",") if t)
    except ValueError:
        raise ValueError(f"bad lengths list {text!r}; expected comma-separated integers")
    if not values or min(values) < 1:
        raise ValueError(f"bad lengths list {text!r}; lengths must be positive")
    return values


# per-command defaults and the parser used for values arriving as text
# (from a config file); argparse handles type conversion for flags.
_SCHEMAS = {
    "gen": {
        "task": ("add", str),
        "count": (1000, int),
        "max_bits": (8, int),
        "seed": (0, int),
        "out": (None, str),
    },
    "train": {
        "task": ("add", str),
        "controller": ("ff", str),
        "max_bits": (8, int),
        "examples": (1_000_000, int),
        "lr": (1e-4, float),
        "rmsprop_decay": (0.95, float),
        "mem_rows": (128, int),
        "mem_cols": (20, int),
        "clip": (10.0, float),
        "seed": (0, int),
        "checkpoint": (None, str),
        "curve": (None, str),
        "checkpoint_every": (10_000, int),
        "log_every": (10_000, int),
    },
    "eval": {
        "checkpoint": (None, str),
        "lengths": (",".join(str(v) for v in evl.DEFAULT_LENGTHS), str),
        "trials": (evl.DEFAULT_TRIALS, int),
        "seed": (0, int),
        "out": (None, str),
    },
    "trace": {
        "checkpoint": (None, str),
        "a": (None, int),
        "b": (None, int),
        "bits": (None, int),
        "out": (None, str),
    },
}


def _load_config_file(path: str) -> dict[str, str]:
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}: malformed config line {line!r}")
            key, value = line.split("=", 1)
            entries[key.strip()] = value.strip()
    return entries


def _resolve(command: str, args: argparse.Namespace) -> dict:
    schema = _SCHEMAS[command]
    file_entries = _load_config_file(args.config) if args.config else {}
    unknown = set(file_entries) - set(schema)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
    resolved = {}
    for key, (default, parse) in schema.items():
        flag_value = getattr(args, key)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_entries:
            resolved[key] = parse(file_entries[key])
        else:
            resolved[key] = default
    summary = " ".join(f"{k}={resolved[k]}" for k in schema)
    print(f"config: command={command} {summary}")
    return resolved


def _require(resolved: dict, command: str, *keys: str) -> None:
    missing = [k for k in keys if resolved[k] is None]
    if missing:
        raise ValueError(f"{command}: missing required flag(s): "
                         + ", ".join(f"--{k.replace('_', '-')}" for k in missing))


def _cmd_gen(args) -> int:
    cfg = _resolve("gen", args)
    if cfg["task"] not in tasks.KINDS:
        raise ValueError(f"unknown task {cfg['task']!r}")
    if cfg["count"] < 0 or cfg["max_bits"] < 1:
        raise ValueError("gen: count must be >= 0 and max-bits >= 1")
    rng = np.random.default_rng(cfg["seed"])
    lines = []
    for _ in range(cfg["count"]):
        bits = int(rng.integers(1, cfg["max_bits"] + 1))
        a = int(rng.integers(0, 1 << bits))
        b = int(rng.integers(0, 1 << bits))
        lines.append(tasks.format_dataset_line(cfg["task"], bits, a, b))
    text = "\n".join(lines) + ("\n" if lines else "")
    if cfg["out"] is None:
        sys.stdout.write(text)
    else:
        with open(cfg["out"], "w") as fh:
            fh.write(text)
    return 0


def _cmd_train(args) -> int:
    cfg = _resolve("train", args)
    config = training.TrainConfig(
        task=cfg["task"],
        controller=cfg["controller"],
        learning_rate=cfg["lr"],
        rmsprop_decay=cfg["rmsprop_decay"],
        example_count=cfg["examples"],
        max_bits=cfg["max_bits"],
        mem_rows=cfg["mem_rows"],
        mem_cols=cfg["mem_cols"],
        clip_bound=cfg["clip"],
        seed=cfg["seed"],
        checkpoint_path=cfg["checkpoint"],
        curve_path=cfg["curve"],
        checkpoint_every=cfg["checkpoint_every"],
        log_every=cfg["log_every"],
    )
    result = training.train(config)
    if result.curve:
        last = result.curve[-1]
        print(f"trained {len(result.curve)} examples; "
              f"final window mean {last[2]:.3f} bits per sequence")
    else:
        print("trained 0 examples")
    return 0


def _cmd_eval(args) -> int:
    cfg = _resolve("eval", args)
    _require(cfg, "eval", "checkpoint")
    model, task, _, _, _ = ctl.load_checkpoint(cfg["checkpoint"])
    runner = evl.NetworkRunner(model, task)
    lengths = _parse_lengths(cfg["lengths"])
    rng = np.random.default_rng(cfg["seed"])
    rows = evl.evaluate_generalization(runner, lengths, cfg["trials"], rng)
    text = evl.format_report(rows)
    if cfg["out"] is None:
        sys.stdout.write(text)
    else:
        with open(cfg["out"], "w") as fh:
            fh.write(text)
        print(f"wrote report for {len(rows)} lengths to {cfg['out']}")
    return 0


def _cmd_trace(args) -> int:
    cfg = _resolve("trace", args)
    _require(cfg, "trace", "checkpoint", "a", "b", "bits", "out")
    model, task, _, _, _ = ctl.load_checkpoint(cfg["checkpoint"])
    example = tasks.make_example(cfg["a"], cfg["b"], cfg["bits"], task)
    trace = evl.record_trace(model, example)
    paths = evl.export_heatmap(trace, cfg["out"])
    print(f"wrote {len(paths)} trace files to {cfg['out']}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ntm-arith",
        description="Train and inspect memory-augmented networks on binary arithmetic.")
    sub = parser.add_subparsers(dest="command")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None,
                       help="key=value file supplying defaults")
        return p

    p = add("gen", "write a dataset of sampled examples")
    p.add_argument("--task", choices=tasks.KINDS)
    p.add_argument("--count", type=int)
    p.add_argument("--max-bits", dest="max_bits", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("train", "train a model and save checkpoint plus learning curve")
    p.add_argument("--task", choices=tasks.KINDS)
    p.add_argument("--controller", choices=ctl.CONTROLLER_KINDS)
    p.add_argument("--max-bits", dest="max_bits", type=int)
    p.add_argument("--examples", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--rmsprop-decay", dest="rmsprop_decay", type=float)
    p.add_argument("--mem-rows", dest="mem_rows", type=int)
    p.add_argument("--mem-cols", dest="mem_cols", type=int)
    p.add_argument("--clip", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--checkpoint")
    p.add_argument("--curve")
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)

    p = add("eval", "measure generalization error over operand lengths")
    p.add_argument("--checkpoint")
    p.add_argument("--lengths")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    p = add("trace", "record memory weightings for one example")
    p.add_argument("--checkpoint")
    p.add_argument("--a", type=int)
    p.add_argument("--b", type=int)
    p.add_argument("--bits", type=int)
    p.add_argument("--out")

    return parser


_HANDLERS = {"gen": _cmd_gen, "train": _cmd_train, "eval": _cmd_eval,
             "trace": _cmd_trace}


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 2
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, OSError, training.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
