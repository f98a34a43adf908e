"""Bit-packed ternary inference arithmetic.

A ternary vector is stored as two 64-bit-word planes: ``mask`` flags the
non-zero lanes and ``sign`` flags the +1 lanes (lane ``i`` is bit ``i % 64``
of word ``i // 64``).  A dot product then needs no multiplies: lanes where
both masks are set open a gate, XNOR of the sign planes marks agreement, and
two popcounts finish the job.  Work is proportional to open gates, which is
the point: zero weights and zero activations cost nothing.

The module also carries the expected-operation-count model used to compare
this scheme against full-precision, binary-weight, ternary-weight, and
fully binary architectures at a given fan-in.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "WORD_BITS",
    "Architecture",
    "OpReport",
    "PackedTernary",
    "PackedMatrix",
    "pack_ternary",
    "pack_ternary_matrix",
    "unpack_ternary",
    "unpack_ternary_matrix",
    "gated_xnor_dot",
    "packed_dense_forward",
    "count_ops",
    "uniform_ternary",
]

WORD_BITS = 64


class Architecture(Enum):
    FULL_PRECISION = "full"
    BWN = "bwn"
    TWN = "twn"
    BNN = "bnn"
    GXNOR = "gxnor"


@dataclass(frozen=True)
class OpReport:
    """Operation counts for one dot product, layer, or expected-cost query.

    Counts are exact non-negative integers on measured paths and expected
    values (possibly fractional) from the cost model.  ``resting_fraction``
    is the share of lanes whose compute unit never wakes up.
    """

    architecture: Architecture
    multiplications: float = 0
    accumulations: float = 0
    xnor_ops: float = 0
    bitcount_ops: float = 0
    resting_fraction: float = 0.0

    def resting_percent(self) -> str:
        return f"{100.0 * self.resting_fraction:.1f}%"


@dataclass(frozen=True)
class PackedTernary:
    """One ternary vector as mask/sign bit planes (little-endian 64-bit words)."""

    length: int
    mask: np.ndarray
    sign: np.ndarray


@dataclass(frozen=True)
class PackedMatrix:
    """A stack of equally long packed ternary rows; planes have shape (rows, words)."""

    length: int
    mask: np.ndarray
    sign: np.ndarray

    @property
    def n_rows(self) -> int:
        return self.mask.shape[0]


def _n_words(length: int) -> int:
    return (length + WORD_BITS - 1) // WORD_BITS


def pack_ternary_matrix(values) -> PackedMatrix:
    """Pack a (rows, length) array of {-1, 0, +1} values into bit planes."""
    v = np.asarray(values)
    if v.ndim != 2 or v.shape[1] < 1:
        raise ValueError(f"expected a (rows, length) array, got shape {v.shape}")
    if not np.all((v == -1) | (v == 0) | (v == 1)):
        raise ValueError("values must be ternary (-1, 0, or +1)")
    rows, length = v.shape
    words = _n_words(length)
    # Pad lanes up to a word multiple, view each 64-lane group as one word.
    bits = np.zeros((rows, words * WORD_BITS), dtype=np.uint64)
    weights = np.uint64(1) << np.arange(WORD_BITS, dtype=np.uint64)

    bits[:, :length] = v != 0
    mask = (bits.reshape(rows, words, WORD_BITS) * weights).sum(axis=2, dtype=np.uint64)
    bits[:, :length] = v == 1
    sign = (bits.reshape(rows, words, WORD_BITS) * weights).sum(axis=2, dtype=np.uint64)
    return PackedMatrix(length=length, mask=mask, sign=sign)


def pack_ternary(values) -> PackedTernary:
    """Pack one ternary vector; ``unpack_ternary`` inverts it exactly."""
    v = np.asarray(values)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D vector, got shape {v.shape}")
    m = pack_ternary_matrix(v[None, :])
    return PackedTernary(length=m.length, mask=m.mask[0], sign=m.sign[0])


def unpack_ternary_matrix(p: PackedMatrix) -> np.ndarray:
    """Recover the int64 {-1, 0, +1} rows from a packed matrix."""
    lanes = np.arange(p.length)
    word = lanes // WORD_BITS
    bit = (lanes % WORD_BITS).astype(np.uint64)
    m = (p.mask[:, word] >> bit) & np.uint64(1)
    s = (p.sign[:, word] >> bit) & np.uint64(1)
    return np.where(m == 1, np.where(s == 1, 1, -1), 0).astype(np.int64)


def unpack_ternary(p: PackedTernary) -> np.ndarray:
    """Recover the int64 {-1, 0, +1} vector from its bit planes."""
    m = PackedMatrix(length=p.length, mask=p.mask[None, :], sign=p.sign[None, :])
    return unpack_ternary_matrix(m)[0]


def _popcount_sum(words: np.ndarray, axis=None):
    return np.bitwise_count(words).sum(axis=axis, dtype=np.int64)


def gated_xnor_dot(a: PackedTernary, b: PackedTernary) -> tuple[int, OpReport]:
    """Exact ternary dot product via gate/XNOR/popcount.

    Only lanes with both operands non-zero (open gates) do any work; the
    report counts one XNOR per open gate and one bitcount per word.
    """
    if a.length != b.length:
        raise ValueError(f"length mismatch: {a.length} vs {b.length}")
    gate = a.mask & b.mask
    agree = ~(a.sign ^ b.sign)
    active = int(_popcount_sum(gate))
    result = 2 * int(_popcount_sum(agree & gate)) - active
    report = OpReport(
        architecture=Architecture.GXNOR,
        xnor_ops=active,
        bitcount_ops=len(gate),
        resting_fraction=1.0 - active / a.length,
    )
    return result, report


def packed_dense_forward(
    x: PackedMatrix, w: PackedMatrix, chunk: int = 256
) -> tuple[np.ndarray, OpReport]:
    """All-pairs gated XNOR dot products: (batch, lanes) x (out, lanes).

    Returns the integer score matrix (batch, out) and one report aggregating
    lane activity over every dot product, reduced in fixed row order.
    """
    if x.length != w.length:
        raise ValueError(f"fan-in mismatch: {x.length} vs {w.length}")
    batch, out = x.n_rows, w.n_rows
    scores = np.empty((batch, out), dtype=np.int64)
    total_active = 0
    for lo in range(0, batch, chunk):
        hi = min(lo + chunk, batch)
        gate = x.mask[lo:hi, None, :] & w.mask[None, :, :]
        agree = ~(x.sign[lo:hi, None, :] ^ w.sign[None, :, :])
        active = _popcount_sum(gate, axis=2)
        scores[lo:hi] = 2 * _popcount_sum(agree & gate, axis=2) - active
        total_active += int(active.sum())
    lanes = batch * out * x.length
    report = OpReport(
        architecture=Architecture.GXNOR,
        xnor_ops=total_active,
        bitcount_ops=batch * out * x.mask.shape[1],
        resting_fraction=1.0 - total_active / lanes if lanes else 0.0,
    )
    return scores, report


def uniform_ternary() -> dict[float, float]:
    """Uniform distribution over {-1, 0, +1}."""
    return {-1.0: 1.0 / 3.0, 0.0: 1.0 / 3.0, 1.0: 1.0 / 3.0}


def _zero_mass(dist: dict, who: str) -> float:
    probs = np.asarray(list(dist.values()), dtype=float)
    if probs.size == 0 or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
        raise ValueError(f"{who} state probabilities must be non-negative and sum to 1")
    return float(sum(p for v, p in dist.items() if v == 0))


def count_ops(
    architecture: Architecture,
    fan_in: int,
    w_dist: dict | None = None,
    a_dist: dict | None = None,
) -> OpReport:
    """Expected per-neuron operation counts for one dot product of ``fan_in`` lanes.

    Lanes are assumed independent with the given weight/activation state
    distributions (uniform ternary by default).  Architectures without a zero
    state never rest; event-driven ones skip exactly the gated-off lanes.
    """
    if fan_in < 1:
        raise ValueError(f"fan-in must be at least 1, got {fan_in}")
    p0w = _zero_mass(w_dist if w_dist is not None else uniform_ternary(), "weight")
    p0a = _zero_mass(a_dist if a_dist is not None else uniform_ternary(), "activation")
    arch = Architecture(architecture)

    if arch is Architecture.FULL_PRECISION:
        return OpReport(arch, multiplications=fan_in, accumulations=fan_in)
    if arch is Architecture.BWN:
        return OpReport(arch, accumulations=fan_in)
    if arch is Architecture.TWN:
        return OpReport(arch, accumulations=(1.0 - p0w) * fan_in, resting_fraction=p0w)
    if arch is Architecture.BNN:
        return OpReport(arch, xnor_ops=fan_in, bitcount_ops=1)
    active = (1.0 - p0w) * (1.0 - p0a)
    return OpReport(
        arch,
        xnor_ops=active * fan_in,
        bitcount_ops=1 if active > 0 else 0,
        resting_fraction=1.0 - active,
    )
