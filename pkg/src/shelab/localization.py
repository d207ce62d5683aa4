"""Localized Picard fields and their dependence cones.

The localized field of depth ``n`` and window coefficient ``c`` restricts every
stochastic integral defining the value at ``(t, x)`` to the window
``[x - sqrt(c t), x + sqrt(c t)]`` and iterates ``n`` times starting from 1.
Its value at ``(t, x)`` therefore depends on noise cells within ``n`` window
radii of ``x`` only, so values at points farther apart than ``2 n sqrt(c t)``
are independent.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, UsageError
from .solver import GridSpec, ModelSpec, NoiseField, SolutionField, mild_radii, solve_mild

__all__ = [
    "LocalizationSpec",
    "SeparationRule",
    "DependenceCone",
    "CouplingError",
    "localize",
    "dependence_cone",
    "coupling_error",
    "write_coupling_csv",
]


@dataclass(frozen=True)
class LocalizationSpec:
    """Window coefficient ``c`` and Picard depth of a localized field.

    Depth 0 is accepted and denotes the constant field 1.
    """

    c: float
    depth: int = 5

    def __post_init__(self):
        if not (math.isfinite(self.c) and self.c > 0):
            raise ConfigurationError(f"window coefficient c must be positive, got {self.c}")
        if int(self.depth) != self.depth or self.depth < 0:
            raise ConfigurationError(f"depth must be a non-negative integer, got {self.depth}")

    def radius(self, t: float) -> float:
        """Window half-width ``sqrt(c t)``."""
        return math.sqrt(self.c * max(t, 0.0))

    def independence_distance(self, t: float) -> float:
        """Separation ``2 n sqrt(c t)`` beyond which cones are disjoint."""
        return 2.0 * self.depth * self.radius(t)


@dataclass(frozen=True)
class SeparationRule:
    """Minimal separation ``c0 t**2 k**3`` between independent probe points."""

    c0: float
    k: int
    t: float

    def __post_init__(self):
        if not self.c0 > 0:
            raise ConfigurationError("c0 must be positive")
        if self.k < 2:
            raise ConfigurationError("moment order k must be at least 2")
        if self.t < 0:
            raise ConfigurationError("t must be non-negative")

    @property
    def separation(self) -> float:
        return self.c0 * self.t**2 * self.k**3

    def admits(self, points) -> bool:
        pts = np.sort(np.asarray(points, dtype=float))
        return bool(pts.size < 2 or np.min(np.diff(pts)) > self.separation)


def localize(noise: NoiseField, model: ModelSpec, grid: GridSpec, spec: LocalizationSpec,
             kernel: str = "heat") -> SolutionField:
    """Localized mild field with windows ``sqrt(c t)`` around every target.

    Raises
    ------
    ConfigurationError
        If ``sqrt(c T) < 2 dx``, i.e. the final window is not resolved.
    """
    if spec.radius(grid.horizon) < 2.0 * grid.dx:
        raise ConfigurationError(
            f"window sqrt(cT)={spec.radius(grid.horizon):.4g} is below two cells (2dx={2 * grid.dx:.4g})"
        )
    return solve_mild(grid, model, noise, window=spec.radius, depth=spec.depth, kernel=kernel,
                      localization=(spec.c, spec.depth))


@dataclass(frozen=True)
class DependenceCone:
    """Noise cells that can influence one localized value.

    ``half_widths[m]`` is the half-width in cells of the influencing interval
    on noise row ``m`` (``-1`` when the row does not contribute); intervals
    are centred at ``center`` and wrap periodically.
    """

    step: int
    center: int
    ncells: int
    half_widths: np.ndarray

    def mask(self) -> np.ndarray:
        """Boolean array of shape ``(nsteps, ncells)``."""
        n = self.half_widths.size
        out = np.zeros((n, self.ncells), dtype=bool)
        off = np.arange(self.ncells)
        dist = np.abs(((off - self.center) + self.ncells // 2) % self.ncells - self.ncells // 2)
        for m, h in enumerate(self.half_widths):
            if h >= 0:
                out[m] = dist <= h
        return out

    def contains(self, m: int, j: int) -> bool:
        h = self.half_widths[m]
        d = abs(((j - self.center) + self.ncells // 2) % self.ncells - self.ncells // 2)
        return bool(h >= 0 and d <= h)

    def cells(self) -> np.ndarray:
        """``(K, 2)`` array of ``(m, j)`` pairs in the cone."""
        return np.argwhere(self.mask())

    def isdisjoint(self, other: "DependenceCone") -> bool:
        return not np.any(self.mask() & other.mask())

    def issubset(self, other: "DependenceCone") -> bool:
        a = self.mask()
        return bool(np.all(~a | other.mask()))


def dependence_cone(spec: LocalizationSpec, grid: GridSpec, t: float, x: float) -> DependenceCone:
    """Exact set of noise cells that :func:`localize` reads for the value at ``(t, x)``.

    Depth ``d`` reads row ``m`` directly within the truncated window of the
    target and indirectly through the depth ``d - 1`` values it multiplies,
    whose own cones are shifted by the window offset.
    """
    n = grid.step_of(t)
    j0 = grid.cell_of(x)
    radii, trunc = mild_radii(grid, spec.radius)
    steps = grid.nsteps
    # reach[a, m]: direct half-width on row m for a target at time index a
    a_idx = np.arange(steps + 1)[:, None]
    m_idx = np.arange(steps)[None, :]
    lag = a_idx - m_idx
    reach = np.where(lag > 0, np.minimum(radii[:, None], trunc[np.clip(lag, 0, steps)]), -1)
    cone = np.full((steps + 1, steps), -1, dtype=np.int64)
    for _ in range(int(spec.depth)):
        nxt = reach.copy()
        # only targets a with a valid nested cone on row m contribute
        for a in range(1, steps + 1):
            inner = cone[:a]  # targets a' < a
            ok = inner >= 0
            if not ok.any():
                continue
            cand = np.where(ok, reach[a, :a][:, None] + inner, -1).max(axis=0)
            nxt[a] = np.maximum(nxt[a], cand)
        cone = nxt
    hw = cone[n] if spec.depth > 0 else np.full(steps, -1, dtype=np.int64)
    return DependenceCone(n, j0, grid.ncells, hw.astype(np.int64))


@dataclass(frozen=True)
class CouplingError:
    """Empirical ``max_probe E|u - u_loc|**p`` with a bootstrap interval."""

    c: float
    depth: int
    t: float
    p: float
    error: float
    ci_lo: float
    ci_hi: float
    per_probe: tuple
    replicas: int

    def row(self) -> dict:
        return {"c": self.c, "depth": self.depth, "t": self.t, "p": self.p,
                "error": self.error, "ci_lo": self.ci_lo, "ci_hi": self.ci_hi}


def coupling_error(full, local, p: float, probes, t: float | None = None, *,
                   n_boot: int = 2000, level: float = 0.95, boot_seed: int = 0) -> CouplingError:
    """Coupled moment error between full and localized fields.

    Parameters
    ----------
    full, local : sequence of SolutionField
        Replica ensembles, paired by noise seed and stream.
    p : float
        Moment order.
    probes : sequence of float
        Probe positions.
    t : float, optional
        Evaluation time (default: final time).

    Returns
    -------
    CouplingError
        The bootstrap resamples replicas jointly across probes and reports a
        percentile interval of the max-over-probes statistic.
    """
    full = [full] if isinstance(full, SolutionField) else list(full)
    local = [local] if isinstance(local, SolutionField) else list(local)
    if not full or len(full) != len(local):
        raise UsageError("full and local ensembles must be non-empty and of equal size")
    g = full[0].grid
    for a, b in zip(full, local):
        if a.grid != g or b.grid != g:
            raise UsageError("all fields must share one grid")
        if a.model != b.model or a.model != full[0].model:
            raise UsageError("full and local fields use different models")
        if (a.seed, a.stream) != (b.seed, b.stream):
            raise UsageError("fields are not coupled through the same noise")
    if b.localization is None:
        raise UsageError("second ensemble is not tagged as localized")
    if p <= 0:
        raise DataError("moment order must be positive")
    t = g.horizon if t is None else float(t)
    cells = [g.cell_of(x) for x in probes]
    diffs = np.array([[abs(a.row(t)[j] - b.row(t)[j]) ** p for j in cells] for a, b in zip(full, local)])
    per = diffs.mean(axis=0)
    gen = np.random.default_rng(boot_seed)
    idx = gen.integers(0, diffs.shape[0], size=(n_boot, diffs.shape[0]))
    boot = diffs[idx].mean(axis=1).max(axis=1)
    lo, hi = np.quantile(boot, [(1 - level) / 2, (1 + level) / 2])
    c, depth = local[0].localization
    return CouplingError(float(c), int(depth), t, float(p), float(per.max()), float(lo), float(hi),
                         tuple(float(v) for v in per), len(full))


def write_coupling_csv(rows, path) -> Path:
    """Write coupling reports with columns ``c,depth,t,p,error,ci_lo,ci_hi``."""
    path = Path(path)
    cols = ["c", "depth", "t", "p", "error", "ci_lo", "ci_hi"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.row().items()})
    return path
