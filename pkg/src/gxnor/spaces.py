"""Discrete state grids, quantization functions, and their pulse surrogates.

A grid with state parameter ``n`` holds ``2**n + 1`` evenly spaced values on
``[-h, h]`` (two endpoint values for ``n = 0``).  Quantizers map reals onto the
grid; because the quantizers are step functions, backpropagation uses bounded
pulse surrogates in place of their impulse-train derivative.  Every function
here is pure and accepts scalars or numpy arrays elementwise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

__all__ = [
    "DiscreteSpace",
    "PulseShape",
    "SurrogateSpec",
    "make_space",
    "quantize_ternary",
    "quantize_binary",
    "quantize_multilevel",
    "quantize_activation",
    "surrogate_rect",
    "surrogate_tri",
    "surrogate_multilevel",
    "surrogate_activation",
]


class PulseShape(Enum):
    """Shape of the pulse standing in for a quantizer step derivative."""

    RECTANGULAR = "rect"
    TRIANGULAR = "tri"


@dataclass(frozen=True)
class DiscreteSpace:
    """The grid of ``2**n + 1`` states spaced ``dz`` apart on ``[-h, h]``.

    ``n = 0`` degenerates to the binary grid ``{-h, +h}`` with ``dz = 2h``.
    """

    n: int
    h: float = 1.0

    def __post_init__(self) -> None:
        if self.n < 0 or int(self.n) != self.n:
            raise ValueError(f"state parameter must be a non-negative integer, got {self.n}")
        if not self.h > 0:
            raise ValueError(f"half-range must be positive, got {self.h}")

    @property
    def dz(self) -> float:
        # 2.0 ** (n - 1) is exact for n = 0 as well, yielding dz = 2h.
        return self.h / 2.0 ** (self.n - 1)

    @property
    def num_states(self) -> int:
        return 2**self.n + 1 if self.n >= 1 else 2

    def states(self) -> np.ndarray:
        """All grid values, ascending.  Canonical float representation."""
        if self.n == 0:
            return np.array([-self.h, self.h])
        idx = np.arange(2**self.n + 1)
        return (idx / 2.0 ** (self.n - 1) - 1.0) * self.h

    def index_of(self, values) -> np.ndarray:
        """Nearest grid index of each value (exact for grid members)."""
        return np.rint((np.asarray(values, dtype=float) + self.h) / self.dz).astype(np.int64)

    def contains(self, values) -> np.ndarray:
        """Elementwise exact grid membership."""
        v = np.asarray(values, dtype=float)
        idx = self.index_of(v)
        ok = (idx >= 0) & (idx < self.num_states)
        states = self.states()
        return ok & (states[np.clip(idx, 0, self.num_states - 1)] == v)


def make_space(n: int, h: float = 1.0) -> DiscreteSpace:
    """Build the grid with state parameter ``n`` scaled to ``[-h, h]``."""
    return DiscreteSpace(n=n, h=h)


@dataclass(frozen=True)
class SurrogateSpec:
    """Pulse family for a quantizer's approximate derivative.

    ``a`` is the pulse half-width, ``r`` the quantizer window threshold.
    """

    shape: PulseShape = PulseShape.RECTANGULAR
    a: float = 0.5
    r: float = 0.5

    def __post_init__(self) -> None:
        if not self.a > 0:
            raise ValueError(f"pulse half-width must be positive, got {self.a}")
        if self.r < 0:
            raise ValueError(f"window threshold must be non-negative, got {self.r}")


def quantize_ternary(x, r: float):
    """Three-way threshold: +1 above ``r``, -1 below ``-r``, 0 inside the band.

    The band is closed: ``|x| == r`` maps to 0.
    """
    x = np.asarray(x, dtype=float)
    out = np.where(x > r, 1.0, np.where(x < -r, -1.0, 0.0))
    return out if out.ndim else float(out)


def quantize_binary(x, h: float = 1.0):
    """Two-state quantizer: ``+h`` for ``x >= 0``, ``-h`` otherwise."""
    x = np.asarray(x, dtype=float)
    out = np.where(x >= 0, h, -h)
    return out if out.ndim else float(out)


def quantize_multilevel(x, space: DiscreteSpace, r: float):
    """Map reals onto the grid through a dead zone and uniform outer bands.

    ``|x| < r`` maps to 0.  Beyond the dead zone, ``[r, h]`` splits into
    ``2**(n-1)`` equal bands; band ``w`` maps to the grid value ``w * dz``
    with the sign of ``x``.  Band edges belong to the higher band, and
    ``|x| > h`` saturates to the endpoint values.
    """
    if space.n < 1:
        raise ValueError("multilevel quantizer requires a grid with n >= 1")
    if not 0 <= r < space.h:
        raise ValueError(f"threshold must satisfy 0 <= r < h, got r={r} h={space.h}")
    x = np.asarray(x, dtype=float)
    half_levels = 2 ** (space.n - 1)
    band = (space.h - r) / half_levels
    ax = np.abs(x)
    level = np.clip(np.floor((ax - r) / band) + 1, 1, half_levels).astype(np.int64)
    out = np.where(ax < r, 0.0, np.sign(x) * ((level / half_levels) * space.h))
    return out if out.ndim else float(out)


def quantize_activation(x, space: DiscreteSpace, r: float):
    """Grid quantizer used by activation layers; dispatches on the state count.

    Binary grids have no dead zone (``r`` is ignored).  Ternary grids use the
    three-way threshold quantizer, whose window may exceed ``h`` (that is how
    high activation sparsity is reached).  Wider grids use the banded
    multilevel quantizer, which requires ``r < h``.
    """
    if space.n == 0:
        return quantize_binary(x, space.h)
    if space.n == 1:
        q = quantize_ternary(x, r)
        return q * space.h if space.h != 1.0 else q
    return quantize_multilevel(x, space, r)


def _pulse_sum(ax: np.ndarray, centers, scale: float, spec: SurrogateSpec) -> np.ndarray:
    """Sum of pulses in ``|x|``, one per center, each of integral ``scale``."""
    a = spec.a
    out = np.zeros_like(ax)
    for c in centers:
        if spec.shape is PulseShape.RECTANGULAR:
            inside = (ax >= c - a) & (ax <= c + a)
            out += np.where(inside, scale / (2.0 * a), 0.0)
        else:
            rising = (ax >= c - a) & (ax < c)
            falling = (ax >= c) & (ax <= c + a)
            out += np.where(rising, scale * (ax - (c - a)) / (a * a), 0.0)
            out += np.where(falling, -scale * (ax - (c + a)) / (a * a), 0.0)
    return out


def surrogate_rect(x, spec: SurrogateSpec):
    """Rectangular pulse of height ``1/(2a)`` on ``r-a <= |x| <= r+a``."""
    if spec.shape is not PulseShape.RECTANGULAR:
        raise ValueError("spec must be rectangular")
    x = np.asarray(x, dtype=float)
    out = _pulse_sum(np.abs(x), [spec.r], 1.0, spec)
    return out if out.ndim else float(out)


def surrogate_tri(x, spec: SurrogateSpec):
    """Triangular pulse peaking at ``1/a`` for ``|x| = r``, feet at ``r -/+ a``."""
    if spec.shape is not PulseShape.TRIANGULAR:
        raise ValueError("spec must be triangular")
    x = np.asarray(x, dtype=float)
    out = _pulse_sum(np.abs(x), [spec.r], 1.0, spec)
    return out if out.ndim else float(out)


def surrogate_multilevel(x, space: DiscreteSpace, spec: SurrogateSpec):
    """One pulse per quantizer step, each integrating to the step height ``dz``.

    Centers sit at the step locations of :func:`quantize_multilevel` for the
    same window ``spec.r``.  With ``n = 1`` and ``h = 1`` this reduces exactly
    to :func:`surrogate_rect` / :func:`surrogate_tri`.
    """
    if space.n < 1:
        raise ValueError("multilevel surrogate requires a grid with n >= 1")
    x = np.asarray(x, dtype=float)
    half_levels = 2 ** (space.n - 1)
    band = (space.h - spec.r) / half_levels
    centers = spec.r + band * np.arange(half_levels)
    out = _pulse_sum(np.abs(x), centers, space.dz, spec)
    return out if out.ndim else float(out)


def surrogate_activation(x, space: DiscreteSpace, spec: SurrogateSpec):
    """Surrogate derivative matching :func:`quantize_activation`.

    Binary grids get a single pulse centered at the sign flip, integrating to
    the full step ``dz = 2h``.
    """
    x = np.asarray(x, dtype=float)
    if space.n == 0:
        out = _pulse_sum(np.abs(x), [0.0], space.dz, spec)
        return out if out.ndim else float(out)
    return surrogate_multilevel(x, space, spec)
