"""External memory: blurry reads/writes and the four-stage addressing chain.

All operations take and return graph nodes so gradients flow through the
memory across timesteps. Weightings over the N rows are kept normalized
(nonnegative, summing to 1) at every stage; interpolation and shifting each
end with an explicit renormalization so float drift cannot accumulate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Node

# Tolerance used when validating that a weighting still sums to one.
WEIGHT_TOL = 1e-6


@dataclass
class HeadParams:
    """Decoded outputs of one head for one timestep.

    key: (M,) lookup vector matched against memory rows.
    strength: scalar > 0 scaling the match scores before the softmax.
    gate: scalar in [0, 1] blending content-based and previous weighting.
    shift: (S,) normalized kernel over offsets -(S//2) .. +(S//2).
    sharpness: scalar >= 1 exponent applied after shifting.
    erase, add: (M,) vectors, present on write heads only.
    """

    key: Node
    strength: Node
    gate: Node
    shift: Node
    sharpness: Node
    erase: Node | None = None
    add: Node | None = None


@dataclass
class MemoryState:
    """Memory matrix plus per-head recurrent state carried between steps."""

    mem: Node
    read_weight: Node
    write_weight: Node
    read_vector: Node


def check_weighting(w: np.ndarray, tol: float = WEIGHT_TOL) -> None:
    """Raise if w is not a distribution over rows within tol."""
    if np.any(w < -tol):
        raise ValueError(f"weighting has negative entry: min {w.min()!r}")
    total = float(np.sum(w))
    if abs(total - 1.0) > tol:
        raise ValueError(f"weighting sums to {total!r}, expected 1")


def memory_read(mem: Node, w: Node) -> Node:
    """Weighted combination of rows: r = sum_i w(i) * mem(i, :)."""
    return ad.vecmat(w, mem)


def memory_write(mem: Node, w: Node, erase: Node, add: Node) -> Node:
    """Erase-then-add update of the full matrix under weighting w.

    Each row is first scaled by (1 - w(i) * erase) elementwise, then gets
    w(i) * add accumulated into it.
    """
    keep = ad.sub(1.0, ad.outer(w, erase))
    erased = ad.mul(mem, keep)
    return ad.add(erased, ad.outer(w, add))


def memory_write_multi(mem: Node, writes) -> Node:
    """Apply several (w, erase, add) writes: all erases first, then all adds.

    With the erases composed multiplicatively before any add lands, the
    result does not depend on the order the heads are listed in.
    """
    erased = mem
    for w, erase, _ in writes:
        erased = ad.mul(erased, ad.sub(1.0, ad.outer(w, erase)))
    out = erased
    for w, _, add in writes:
        out = ad.add(out, ad.outer(w, add))
    return out


def renormalize(w: Node) -> Node:
    return ad.div(w, ad.sum_reduce(w))


def content_address(mem: Node, key: Node, strength: Node) -> Node:
    """Similarity-driven weighting: softmax of strength * cos(key, row)."""
    sims = ad.cosine_rows(mem, key)
    return ad.softmax(ad.mul(strength, sims))


def interpolate(w_content: Node, w_prev: Node, gate: Node) -> Node:
    """Blend g * w_content + (1 - g) * w_prev, renormalized."""
    g = gate
    mixed = ad.add(ad.mul(g, w_content), ad.mul(ad.sub(1.0, g), w_prev))
    return renormalize(mixed)


def shift(w: Node, kernel: Node) -> Node:
    """Rotate the weighting by the shift kernel, renormalized."""
    return renormalize(ad.circular_conv(w, kernel))


def sharpen(w: Node, gamma: Node) -> Node:
    """Raise each entry to gamma and renormalize.

    gamma >= 1 concentrates the weighting; an all-zero input (possible only
    through numeric underflow) is rejected rather than silently renormalized.
    """
    if float(np.sum(w.value)) <= 0.0:
        raise ValueError("sharpen: weighting has no mass")
    p = ad.power(w, gamma)
    return renormalize(p)


def address(mem: Node, w_prev: Node, head: HeadParams) -> Node:
    """Full addressing chain: content match, gate, shift, sharpen."""
    wc = content_address(mem, head.key, head.strength)
    wg = interpolate(wc, w_prev, head.gate)
    ws = shift(wg, head.shift)
    return sharpen(ws, head.sharpness)
