"""Binary arithmetic episodes: symbol encoding, bit oracles, sequence assembly.

Operands are little-endian throughout (bit i weighs 2^i). An input sequence
presents the first operand's bits, an operator marker, the second operand's
bits, and a terminator; the target presents the result bits followed by the
terminator. Both operands are zero-padded to their common length before the
bit-level algorithms run, so results always have the full declared width.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

KINDS = ("add", "mul")


class Symbol(enum.Enum):
    ZERO = 0
    ONE = 1
    OP = 2
    END = 3


_ENCODING = {
    Symbol.ZERO: (0.0, 0.0, 0.0),
    Symbol.ONE: (1.0, 0.0, 0.0),
    Symbol.OP: (0.0, 1.0, 0.0),
    Symbol.END: (0.0, 0.0, 1.0),
}


def encode_symbol(s: Symbol) -> np.ndarray:
    """Map a symbol to its 3-channel input vector."""
    return np.array(_ENCODING[s], dtype=np.float64)


def encode_bit(b: int) -> np.ndarray:
    return encode_symbol(Symbol.ONE if b else Symbol.ZERO)


def to_little_endian(n: int, length: int) -> list[int]:
    """Bits of n, least significant first, over exactly `length` positions."""
    if n < 0:
        raise ValueError(f"to_little_endian: negative value {n}")
    if length < 1:
        raise ValueError(f"to_little_endian: length {length} must be positive")
    if n >= (1 << length):
        raise ValueError(f"to_little_endian: {n} does not fit in {length} bits")
    return [(n >> i) & 1 for i in range(length)]


def from_little_endian(bits) -> int:
    return sum((1 << i) for i, b in enumerate(bits) if b)


def oracle_add(n1, n2) -> list[int]:
    """Ripple-carry sum of two equal-length little-endian bit lists.

    The result carries one extra position for the final carry-out.
    """
    if len(n1) != len(n2):
        raise ValueError(f"oracle_add: lengths {len(n1)} and {len(n2)} differ")
    out = []
    carry = 0
    for a, b in zip(n1, n2):
        total = a + b + carry
        out.append(total & 1)
        carry = total >> 1
    out.append(carry)
    return out


def oracle_mul(n1, n2) -> list[int]:
    """Schoolbook product of two equal-length little-endian bit lists.

    Partial products of n1 shifted by each set bit of n2 are accumulated
    with carry propagation; the result spans 2l positions.
    """
    if len(n1) != len(n2):
        raise ValueError(f"oracle_mul: lengths {len(n1)} and {len(n2)} differ")
    l = len(n1)
    acc = [0] * (2 * l)
    for j, bit in enumerate(n2):
        if not bit:
            continue
        carry = 0
        for i, a in enumerate(n1):
            k = i + j
            total = acc[k] + a + carry
            acc[k] = total & 1
            carry = total >> 1
        k = j + l
        while carry:
            total = acc[k] + carry
            acc[k] = total & 1
            carry = total >> 1
            k += 1
    return acc


@dataclass
class TaskExample:
    """One supervised episode.

    inputs has one row per presented symbol (operand1 bits, OP, operand2
    bits, END); targets has one row per expected output symbol (result bits
    then END). Both are float64 arrays with 3 columns.
    """

    kind: str
    operand1: list[int]
    operand2: list[int]
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def result_bits(self) -> int:
        return self.targets.shape[0] - 1


def _assemble(kind: str, op1: list[int], op2: list[int]) -> TaskExample:
    if kind not in KINDS:
        raise ValueError(f"unknown task kind {kind!r}")
    l = max(len(op1), len(op2))
    p1 = op1 + [0] * (l - len(op1))
    p2 = op2 + [0] * (l - len(op2))
    result = oracle_add(p1, p2) if kind == "add" else oracle_mul(p1, p2)

    rows = [encode_bit(b) for b in op1]
    rows.append(encode_symbol(Symbol.OP))
    rows.extend(encode_bit(b) for b in op2)
    rows.append(encode_symbol(Symbol.END))
    inputs = np.stack(rows)

    t_rows = [encode_bit(b) for b in result]
    t_rows.append(encode_symbol(Symbol.END))
    targets = np.stack(t_rows)
    return TaskExample(kind=kind, operand1=list(op1), operand2=list(op2),
                       inputs=inputs, targets=targets)


def make_example(a: int, b: int, bits: int, kind: str) -> TaskExample:
    """Deterministic episode for the pair (a, b), both encoded over `bits`."""
    return _assemble(kind, to_little_endian(a, bits), to_little_endian(b, bits))


def sample_example(rng: np.random.Generator, max_bits: int, kind: str) -> TaskExample:
    """Random episode: each operand gets its own length in 1..max_bits."""
    if max_bits < 1:
        raise ValueError(f"sample_example: max_bits {max_bits} must be positive")
    l1 = int(rng.integers(1, max_bits + 1))
    l2 = int(rng.integers(1, max_bits + 1))
    a = int(rng.integers(0, 1 << l1))
    b = int(rng.integers(0, 1 << l2))
    return _assemble(kind, to_little_endian(a, l1), to_little_endian(b, l2))


def format_dataset_line(kind: str, bits: int, a: int, b: int) -> str:
    """One dumped example: `<kind> <bits> <a> <b>`, decimal integers."""
    if kind not in KINDS:
        raise ValueError(f"unknown task kind {kind!r}")
    return f"{kind} {bits} {a} {b}"


def parse_dataset_line(line: str) -> TaskExample:
    parts = line.split()
    if len(parts) != 4:
        raise ValueError(f"malformed dataset line: {line!r}")
    kind, bits, a, b = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    return make_example(a, b, bits, kind)
