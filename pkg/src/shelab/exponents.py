"""Moment Lyapunov exponents, intermittency and the growth-rate thresholds."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import stats

from .errors import ConfigurationError, DataError, DomainError

__all__ = [
    "GammaCurve",
    "GammaEstimate",
    "IntermittencyReport",
    "ThresholdReport",
    "pam_gamma",
    "estimate_gamma",
    "intermittency_check",
    "thresholds",
    "DEFAULT_EPS_GRID",
]

DEFAULT_EPS_GRID = tuple(float(e) for e in np.geomspace(1e-6, 0.9, 73))


def pam_gamma(p, kappa: float = 1.0):
    """Exponent ``kappa**4 p (p**2 - 1) / 24`` of ``sigma(u) = kappa u``."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise DomainError("moment order must be non-negative")
    out = float(kappa) ** 4 * p * (p * p - 1.0) / 24.0
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class GammaCurve:
    """Lower and upper exponent curves ``p -> gamma(p)`` for ``p >= 1``.

    Attributes
    ----------
    lower, upper : callable
        The liminf and limsup curves.
    provenance : str
        ``"analytic-pam"``, ``"analytic"`` or ``"estimated"``.
    grid : tuple or None
        Orders at which an estimated curve was tabulated.
    bands : tuple or None
        ``(lower_lo, lower_hi, upper_lo, upper_hi)`` callables for
        estimated curves.
    """

    lower: Callable = field(repr=False)
    upper: Callable = field(repr=False)
    provenance: str = "analytic"
    name: str = ""
    grid: tuple | None = None
    bands: tuple | None = field(default=None, repr=False)

    @classmethod
    def pam(cls, kappa: float = 1.0) -> "GammaCurve":
        def f(p):
            return pam_gamma(p, kappa)

        return cls(f, f, "analytic-pam", f"pam(kappa={kappa:g})")

    @classmethod
    def analytic(cls, fn: Callable, name: str = "analytic", upper: Callable | None = None) -> "GammaCurve":
        return cls(fn, upper or fn, "analytic", name)

    @classmethod
    def estimated(cls, p_grid, lower, upper=None, lower_ci=None, upper_ci=None, name="estimated") -> "GammaCurve":
        """Piecewise-linear curves through tabulated estimates.

        ``lower_ci`` and ``upper_ci`` are ``(lo, hi)`` array pairs; when given,
        thresholds are reported as worst-case intervals over the band corners.
        """
        p = np.asarray(p_grid, dtype=float)
        if p.ndim != 1 or p.size < 2 or np.any(np.diff(p) <= 0) or p[0] < 1:
            raise ConfigurationError("p grid must be increasing, start at p >= 1, and have >= 2 points")
        lo = np.asarray(lower, dtype=float)
        up = lo if upper is None else np.asarray(upper, dtype=float)
        if lo.shape != p.shape or up.shape != p.shape:
            raise ConfigurationError("curve values must match the p grid")

        def interp(vals):
            vals = np.array(vals, dtype=float)
            return lambda q: np.interp(q, p, vals)[()]

        bands = None
        if lower_ci is not None or upper_ci is not None:
            llo, lhi = (lo, lo) if lower_ci is None else lower_ci
            ulo, uhi = (up, up) if upper_ci is None else upper_ci
            bands = tuple(interp(v) for v in (llo, lhi, ulo, uhi))
        return cls(interp(lo), interp(up), "estimated", name, tuple(p.tolist()), bands)

    def ratios(self, p_grid, which: str = "upper") -> np.ndarray:
        fn = self.upper if which == "upper" else self.lower
        p = np.asarray(p_grid, dtype=float)
        return np.array([float(fn(q)) / q for q in p])

    def is_convex(self, p_grid, tol: float = 1e-12) -> bool:
        """Second differences of the upper curve are non-negative on ``p_grid``."""
        p = np.asarray(p_grid, dtype=float)
        g = np.array([float(self.upper(q)) for q in p])
        s = np.diff(g) / np.diff(p)
        return bool(np.all(np.diff(s) >= -tol))

    def corners(self):
        """Curves at the four corners of the CI band (or just ``self``)."""
        if self.bands is None:
            return [self]
        llo, lhi, ulo, uhi = self.bands
        return [GammaCurve(lw, up, "band-corner", self.name, self.grid)
                for lw in (llo, lhi) for up in (ulo, uhi)]


@dataclass(frozen=True)
class GammaEstimate:
    """Growth-rate fit of a log-moment series.

    ``slope`` is the weighted least-squares fit with a normal ``level`` CI;
    ``secant`` is the endpoint secant. ``lower_proxy`` and ``upper_proxy``
    are their minimum and maximum.
    """

    p: float
    slope: float
    ci_lo: float
    ci_hi: float
    se: float
    secant: float
    lower_proxy: float
    upper_proxy: float
    n_points: int
    window: tuple


def estimate_gamma(series, p: float, window, level: float = 0.95) -> GammaEstimate:
    """Fit ``log E|u(t, 0)|**p`` against ``t`` on ``window = (t0, t1)``.

    Parameters
    ----------
    series : sequence of (t, moment, se)
        Moment estimates and their standard errors. If any ``se`` is zero the
        fit is unweighted and the CI collapses to the slope.
    p : float
        Moment order (reported only).
    window : (float, float)
        Fit interval, inclusive.

    Raises
    ------
    DataError
        Fewer than 4 points in the window, or a non-positive moment.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DataError("series must be a list of (t, moment, se) triples")
    t0, t1 = window
    sel = arr[(arr[:, 0] >= t0 - 1e-12) & (arr[:, 0] <= t1 + 1e-12)]
    sel = sel[np.argsort(sel[:, 0])]
    if sel.shape[0] < 4:
        raise DataError(f"need at least 4 time points in [{t0}, {t1}], got {sel.shape[0]}")
    if np.any(sel[:, 1] <= 0):
        raise DataError("non-positive moment estimate; more replicas are needed for this order")
    t, m, se = sel.T
    y = np.log(m)
    if np.any(se <= 0):
        w = np.ones_like(t)
        exact = True
    else:
        w = (m / se) ** 2  # delta method: Var(log m) = (se / m)**2
        exact = False
    tb = np.sum(w * t) / np.sum(w)
    yb = np.sum(w * y) / np.sum(w)
    sxx = np.sum(w * (t - tb) ** 2)
    slope = float(np.sum(w * (t - tb) * (y - yb)) / sxx)
    s_se = 0.0 if exact else float(1.0 / math.sqrt(sxx))
    z = stats.norm.ppf(0.5 + level / 2)
    secant = float((y[-1] - y[0]) / (t[-1] - t[0]))
    return GammaEstimate(float(p), slope, slope - z * s_se, slope + z * s_se, s_se, secant,
                         min(slope, secant), max(slope, secant), int(t.size), (float(t0), float(t1)))


@dataclass(frozen=True)
class IntermittencyReport:
    p_grid: tuple
    left_ratios: tuple
    right_ratios: tuple
    violations: tuple
    fully_intermittent: bool


def intermittency_check(curve: GammaCurve, p_grid) -> IntermittencyReport:
    """Check strict increase of ``p -> gamma(p) / p`` on adjacent grid pairs.

    The left member of each pair uses the lower curve and the right member
    the upper curve, so only pairs that fail in the most favourable
    combination are flagged.
    """
    p = [float(q) for q in p_grid]
    if not p or p[0] < 1 or any(b <= a for a, b in zip(p, p[1:])):
        raise DomainError("p grid must be increasing and lie in [1, inf)")
    left = tuple(float(curve.lower(q)) / q for q in p)
    right = tuple(float(curve.upper(q)) / q for q in p)
    bad = tuple((p[i], p[i + 1]) for i in range(len(p) - 1) if not left[i] < right[i + 1])
    return IntermittencyReport(tuple(p), left, right, bad, not bad)


@dataclass(frozen=True)
class ThresholdReport:
    """Growth-rate thresholds and the constants attached to them.

    ``lambda1``: law of large numbers in probability; ``lambda2``: almost sure
    law; ``lambda3`` / ``lambda4``: Gaussian fluctuations hold above / fail
    below; ``lambda5``: quantitative normal approximation. ``intervals`` holds
    worst-case ``(lo, hi)`` pairs for curves with CI bands.
    """

    lambda1: float
    lambda2: float
    lambda3: float
    lambda4: float
    lambda5: float
    lambda5_alt: float
    lip: float
    eps_grid: tuple
    c1: tuple
    c2: tuple
    k: int
    provenance: str
    curve_name: str
    eps_argmin: float
    eps_argmax: float
    fd_step: float
    notes: tuple = ()
    intervals: dict | None = None

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _core(curve: GammaCurve, lip: float, eps: np.ndarray, fd_step: float):
    up, lo = curve.upper, curve.lower
    if curve.grid is not None:
        nxt = [q for q in curve.grid if q > 1.0]
        if not nxt or 1.0 not in curve.grid:
            raise DomainError("tabulated curve must contain p = 1 and a larger order")
        lam1 = (float(up(nxt[0])) - float(up(1.0))) / (nxt[0] - 1.0)
    else:
        lam1 = (float(up(1.0 + fd_step)) - float(up(1.0))) / fd_step
    g2 = float(lo(2.0))
    lam2 = 5.0 * float(up(4.0)) / 6.0
    ex3 = np.array([2.0 * (float(up(2.0 + e)) - g2) / e - g2 for e in eps])
    ex4 = np.array([2.0 * (g2 - float(up(2.0 - e))) / e - g2 for e in eps])
    lam5 = 2.0**9 * lip**4 + float(up(4.0)) - 2.0 * g2
    alt = (2.0**11 - 2.0) * float(up(2.0)) + float(up(4.0))
    return lam1, lam2, ex3, ex4, lam5, alt


def thresholds(curve: GammaCurve, lip: float, eps_grid=DEFAULT_EPS_GRID, k: int = 4,
               fd_step: float = 1e-6) -> ThresholdReport:
    """Compute ``lambda1 .. lambda5`` for an exponent curve.

    The infimum and supremum over ``eps in (0, 1)`` are taken over
    ``eps_grid``; ``lambda5_alt = (2**11 - 2) gamma(2) + gamma(4)`` is the
    equivalent form valid for the linear model with unit Lipschitz constant.
    ``c1 = 8 lip / eps**1.5`` and ``c2 = 8 k**2 lip**4 / (1 - eps)**4`` are
    reported on the same grid.
    """
    eps = np.asarray(eps_grid, dtype=float)
    if eps.ndim != 1 or eps.size == 0 or np.any((eps <= 0) | (eps >= 1)):
        raise DomainError("epsilon grid must lie in the open interval (0, 1)")
    if not lip > 0:
        raise DomainError("Lipschitz constant must be positive")
    lam1, lam2, ex3, ex4, lam5, alt = _core(curve, lip, eps, fd_step)
    notes = []
    probe = [1.0 + fd_step, 1.5, 2.0, 3.0, 4.0]
    if any(float(curve.upper(q)) != float(curve.lower(q)) for q in probe):
        notes.append("upper and lower curves differ: lambda1 uses the upper curve")
    intervals = None
    if curve.bands is not None:
        vals = [_core(c, lip, eps, fd_step) for c in curve.corners()]
        cols = {
            "lambda1": [v[0] for v in vals],
            "lambda2": [v[1] for v in vals],
            "lambda3": [float(v[2].min()) for v in vals],
            "lambda4": [float(v[3].max()) for v in vals],
            "lambda5": [v[4] for v in vals],
        }
        intervals = {key: (min(c), max(c)) for key, c in cols.items()}
    c1 = tuple(float(v) for v in 8.0 * lip / eps**1.5)
    c2 = tuple(float(v) for v in 2.0**3 * k**2 * lip**4 / (1.0 - eps) ** 4)
    return ThresholdReport(
        lambda1=float(lam1), lambda2=float(lam2), lambda3=float(ex3.min()), lambda4=float(ex4.max()),
        lambda5=float(lam5), lambda5_alt=float(alt), lip=float(lip), eps_grid=tuple(eps.tolist()),
        c1=c1, c2=c2, k=int(k), provenance=curve.provenance, curve_name=curve.name,
        eps_argmin=float(eps[np.argmin(ex3)]), eps_argmax=float(eps[np.argmax(ex4)]),
        fd_step=float(fd_step), notes=tuple(notes), intervals=intervals,
    )
