"""Growing averaging windows, spatial averages and interval partitions.

Partition endpoints are kept as :class:`fractions.Fraction` so that tiling
identities hold exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DomainError, InfeasiblePartitionError
from .solver import GridSpec, SolutionField

__all__ = [
    "WindowSchedule",
    "PartitionLayout",
    "window_length",
    "window_weights",
    "spatial_average",
    "build_partition",
    "refine_partition",
]


def window_length(lam: float, t):
    """Half-length ``L(t) = exp(lam t)``."""
    if not lam > 0:
        raise DomainError(f"growth rate must be positive, got {lam}")
    return np.exp(lam * np.asarray(t, dtype=float))[()]


@dataclass(frozen=True)
class WindowSchedule:
    """Growth rate and increasing observation times."""

    lam: float
    times: tuple

    def __post_init__(self):
        if not self.lam > 0:
            raise ConfigurationError(f"growth rate must be positive, got {self.lam}")
        ts = tuple(float(t) for t in self.times)
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigurationError("schedule times must be strictly increasing")
        object.__setattr__(self, "times", ts)

    @property
    def lengths(self) -> np.ndarray:
        return window_length(self.lam, np.array(self.times)) * np.ones(len(self.times))


def window_weights(grid: GridSpec, L: float, pad: bool = True) -> np.ndarray:
    """Overlap of each lattice cell with ``[-L, L]``.

    Cell ``j`` covers ``[x_j - dx/2, x_j + dx/2]``; the weights sum to ``2L``
    (up to rounding), so ``weights @ u`` is the midpoint-rule integral.

    Raises
    ------
    ConfigurationError
        If ``L < dx`` or ``[-L, L]`` plus the ``6 sqrt(T)`` pad exceeds the grid.
    """
    if not L >= grid.dx:
        raise ConfigurationError(f"window half-length {L} is below one cell ({grid.dx})")
    if pad:
        grid.check_pad(L)
    elif L > grid.half_width - grid.dx / 2:
        raise ConfigurationError("window exceeds the periodic domain")
    x = grid.x
    lo = np.maximum(x - grid.dx / 2.0, -L)
    hi = np.minimum(x + grid.dx / 2.0, L)
    return np.clip(hi - lo, 0.0, None)


def spatial_average(field: SolutionField, L: float, t: float | None = None):
    """Average of ``u(t, .)`` over ``[-L, L]`` with fractional end cells.

    Returns one value when ``t`` is given, otherwise one per recorded time.
    """
    w = window_weights(field.grid, L)
    if t is not None:
        return float(w @ field.row(t)) / (2.0 * L)
    return field.values @ w / (2.0 * L)


def _frac(v) -> Fraction:
    if isinstance(v, Fraction):
        return v
    if isinstance(v, float) and not math.isfinite(v):
        raise ConfigurationError("lengths must be finite")
    return Fraction(v)


@dataclass(frozen=True)
class PartitionLayout:
    """Blocks tiling ``[-L, L]`` with an optional refined layer.

    Attributes
    ----------
    blocks : tuple of (Fraction, Fraction)
        ``q`` consecutive intervals, numbered from 1.
    even, odd : tuple of int
        1-based block numbers of each parity class.
    inner, strips : tuple or None
        Shrunken blocks and the separating strips (refined layouts only).
    """

    L: Fraction
    Lp: Fraction
    q: int
    lengths: tuple
    blocks: tuple
    even: tuple
    odd: tuple
    margin: Fraction | None = None
    inner: tuple | None = None
    strips: tuple | None = None

    def to_dict(self) -> dict:
        def iv(pairs):
            return [{"lo": str(a), "hi": str(b), "lo_float": float(a), "hi_float": float(b)} for a, b in pairs]

        out = {
            "L": str(self.L),
            "L_block": str(self.Lp),
            "q": self.q,
            "block_lengths": [str(x) for x in self.lengths],
            "blocks": iv(self.blocks),
            "parity_even": list(self.even),
            "parity_odd": list(self.odd),
        }
        if self.inner is not None:
            out["margin"] = str(self.margin)
            out["inner_blocks"] = iv(self.inner)
            out["strips"] = iv(self.strips)
        return out

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def build_partition(L, Lp) -> PartitionLayout:
    """Split ``[-L, L]`` into ``q = floor(2L / Lp)`` blocks of length ``Lp + alpha``.

    The remainder ``2L - q Lp`` is spread evenly, ``alpha = remainder / q``,
    which must not exceed 1.

    Raises
    ------
    InfeasiblePartitionError
        If the remainder exceeds ``q``.
    """
    L, Lp = _frac(L), _frac(Lp)
    if not 0 < Lp < L:
        raise ConfigurationError(f"need 0 < L' < L, got L'={Lp}, L={L}")
    q = math.floor(2 * L / Lp)
    rem = 2 * L - q * Lp
    if rem > q:
        raise InfeasiblePartitionError(
            f"remainder {float(rem):.6g} exceeds q={q}; choose a smaller block length L'"
        )
    alpha = rem / q
    lengths = tuple(Lp + alpha for _ in range(q))
    edges = [-L]
    for ln in lengths:
        edges.append(edges[-1] + ln)
    blocks = tuple((edges[i], edges[i + 1]) for i in range(q))
    even = tuple(i for i in range(1, q + 1) if i % 2 == 0)
    odd = tuple(i for i in range(1, q + 1) if i % 2 == 1)
    return PartitionLayout(L, Lp, q, lengths, blocks, even, odd)


def refine_partition(layout: PartitionLayout, t: float | None = None, k: int | None = None,
                     c0: float | None = None, *, margin=None) -> PartitionLayout:
    """Shrink each block by ``margin`` on both sides and collect the strips.

    The margin is ``ceil(c0 t**2 k**3)`` unless given explicitly. Strips are
    ``[-L, -L + m]``, ``[b_i - m, b_i + m]`` at the interior block edges, and
    ``[L - m, L]``.

    Raises
    ------
    InfeasiblePartitionError
        If ``Lp <= 2 margin`` (inner blocks would be empty).
    """
    if margin is None:
        if t is None or k is None or c0 is None:
            raise ConfigurationError("give either (t, k, c0) or an explicit margin")
        if c0 <= 0 or k < 2 or t < 0:
            raise ConfigurationError("need c0 > 0, k >= 2 and t >= 0")
        margin = Fraction(math.ceil(_frac(c0) * _frac(t) ** 2 * k**3))
    m = _frac(margin)
    if m < 0:
        raise ConfigurationError("margin must be non-negative")
    if not layout.Lp > 2 * m:
        raise InfeasiblePartitionError(f"margin {m} too large for block length {layout.Lp}")
    inner = tuple((a + m, b - m) for a, b in layout.blocks)
    strips = [(-layout.L, -layout.L + m)]
    for (_, b) in layout.blocks[:-1]:
        strips.append((b - m, b + m))
    strips.append((layout.L - m, layout.L))
    return PartitionLayout(layout.L, layout.Lp, layout.q, layout.lengths, layout.blocks,
                           layout.even, layout.odd, m, inner, tuple(strips))
