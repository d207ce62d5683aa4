"""Reference quantities for the stochastic heat equation with flat unit data.

Everything here is deterministic and is used as an oracle for the Monte
Carlo machinery: the heat kernel, the second moment of the parabolic
Anderson model, two-point covariances, window variances, and the exact second
moment of the explicit lattice scheme.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import integrate, special

from .errors import ConfigurationError, DomainError, QuadratureError

__all__ = [
    "QuadratureSpec",
    "XiCurve",
    "heat_kernel",
    "pam_second_moment",
    "renewal_volterra",
    "pair_covariance",
    "gaussian_window_variance",
    "lattice_second_moment",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_4PI = 1.0 / math.sqrt(4.0 * math.pi)


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerance settings for adaptive quadrature.

    Parameters
    ----------
    rtol : float
        Requested relative accuracy.
    max_subdivisions : int
        Upper bound on the number of adaptive subintervals.
    atol : float
        Absolute floor below which the error estimate is always accepted.
    """

    rtol: float = 1e-8
    max_subdivisions: int = 200
    atol: float = 1e-14

    def __post_init__(self):
        if not self.rtol > 0:
            raise ConfigurationError(f"rtol must be positive, got {self.rtol}")
        if int(self.max_subdivisions) != self.max_subdivisions or self.max_subdivisions < 1:
            raise ConfigurationError(
                f"max_subdivisions must be a positive integer, got {self.max_subdivisions}"
            )
        if self.atol < 0:
            raise ConfigurationError("atol must be non-negative")


@dataclass(frozen=True)
class XiCurve:
    """Time profile ``xi(t) = E[sigma(u(t, 0))**2]``.

    Use the constructors :meth:`pam`, :meth:`constant` and :meth:`table`
    rather than building instances by hand.
    """

    evaluator: Callable[[float], float] = field(repr=False)
    tag: str
    kappa: float | None = None

    def __call__(self, t):
        return self.evaluator(t)

    @classmethod
    def pam(cls, kappa: float = 1.0) -> "XiCurve":
        """Exact curve for ``sigma(u) = kappa * u``: ``kappa**2 * E[u**2]``."""
        k2 = float(kappa) ** 2

        def ev(t):
            return k2 * pam_second_moment(t, kappa)

        return cls(ev, "analytic-pam", float(kappa))

    @classmethod
    def constant(cls, c: float = 1.0) -> "XiCurve":
        """Constant curve ``c**2`` of the Gaussian field driven by ``sigma = c``."""
        c2 = float(c) ** 2

        def ev(t):
            return c2 + 0.0 * np.asarray(t, dtype=float)

        return cls(ev, "constant-sigma")

    @classmethod
    def table(cls, times, values) -> "XiCurve":
        """Piecewise-linear interpolant of an empirical table."""
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ConfigurationError("table needs matching 1-D arrays with at least two points")
        if np.any(np.diff(times) <= 0):
            raise ConfigurationError("table times must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ConfigurationError("xi values must be finite and non-negative")

        def ev(t):
            return np.interp(t, times, values)

        return cls(ev, "empirical-table")


def heat_kernel(t, x):
    """Gaussian density ``(2 pi t)**-0.5 * exp(-x**2 / (2 t))``.

    Parameters
    ----------
    t : float or array_like
        Time, strictly positive.
    x : float or array_like
        Position.

    Returns
    -------
    float or ndarray
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    if np.any(~(t > 0)):
        raise DomainError("heat kernel needs t > 0")
    out = np.exp(-x * x / (2.0 * t)) * _INV_SQRT_2PI / np.sqrt(t)
    return out[()] if out.ndim == 0 else out


def pam_second_moment(t, kappa: float = 1.0):
    """Second moment ``E[u(t, 0)**2]`` for ``sigma(u) = kappa * u``.

    Closed form ``2 exp(kappa**4 t / 4) Phi(kappa**2 sqrt(t / 2))``, which
    solves the renewal equation
    ``m(t) = 1 + kappa**2 * int_0^t m(r) (4 pi (t - r))**-0.5 dr``;
    :func:`renewal_volterra` solves the same equation numerically.
    """
    t = np.asarray(t, dtype=float)
    if np.any(~(t >= 0)):
        raise DomainError("second moment needs t >= 0")
    k2 = float(kappa) ** 2
    out = 2.0 * np.exp(k2 * k2 * t / 4.0) * special.ndtr(k2 * np.sqrt(t / 2.0))
    return out[()] if out.ndim == 0 else out


def renewal_volterra(horizon: float, steps: int = 4000, kappa: float = 1.0):
    """Solve the second-moment renewal equation by product integration.

    The unknown is taken piecewise linear on a uniform grid and each panel is
    integrated exactly against the ``(t - r)**-0.5`` singularity.

    Parameters
    ----------
    horizon : float
        Final time.
    steps : int
        Number of panels.
    kappa : float
        Noise strength; the kernel is ``kappa**2 (4 pi s)**-0.5``.

    Returns
    -------
    times, moments : ndarray
        Grid ``0, h, ..., horizon`` and the solution on it.
    """
    if not horizon > 0 or steps < 1:
        raise DomainError("need horizon > 0 and at least one step")
    h = horizon / steps
    m = np.arange(1, steps + 1, dtype=float)
    lo, hi = (m - 1.0) * h, m * h
    i0 = 2.0 * (np.sqrt(hi) - np.sqrt(lo))
    i1 = (2.0 / 3.0) * (hi**1.5 - lo**1.5)
    scale = float(kappa) ** 2 * _INV_SQRT_4PI / h
    far = scale * (i1 - lo * i0)  # weight of the older panel node
    near = scale * (hi * i0 - i1)  # weight of the newer panel node
    xi = np.empty(steps + 1)
    xi[0] = 1.0
    for i in range(1, steps + 1):
        # panels at lag 1..i; node i-m is "far", node i-m+1 is "near"
        acc = far[:i] @ xi[i - 1 :: -1] if i > 0 else 0.0
        if i > 1:
            acc += near[1:i] @ xi[i - 1 : 0 : -1]
        xi[i] = (1.0 + acc) / (1.0 - near[0])
    return np.linspace(0.0, horizon, steps + 1), xi


def _checked_quad(f, a, b, q: QuadratureSpec, what: str, **kw):
    limit = int(q.max_subdivisions)
    if "weight" in kw:
        # the weighted QUADPACK routines need room for at least one bisection
        limit = max(limit, 2)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad(
            f, a, b, epsabs=q.atol, epsrel=max(q.rtol, 1.2e-14), limit=limit, full_output=1, **kw
        )[:3]
    if err > max(q.rtol * abs(val), q.atol) * 10.0:
        raise QuadratureError(f"{what} did not converge", err)
    return val


def pair_covariance(t: float, sep: float, xi: XiCurve, q: QuadratureSpec | None = None) -> float:
    """Covariance ``int_0^t xi(r) p_{2(t-r)}(sep) dr`` of two points ``sep`` apart.

    The ``(t - r)**-0.5`` factor is handled as an algebraic quadrature weight.
    """
    if not t > 0:
        raise DomainError("pair covariance needs t > 0")
    q = q or QuadratureSpec()
    s2 = float(sep) ** 2

    def f(r):
        v = t - r
        g = math.exp(-s2 / (4.0 * v)) if v > 0 else 0.0
        return float(xi(r)) * g * _INV_SQRT_4PI

    if s2 == 0.0:

        def f(r):  # noqa: F811
            return float(xi(r)) * _INV_SQRT_4PI

    return _checked_quad(f, 0.0, t, q, "pair covariance", weight="alg", wvar=(0.0, -0.5))


def _window_inner(v, L):
    # int_0^{2L} p_v(z) (2 - z/L) dz
    if v <= 0:
        return 1.0
    sv = math.sqrt(v)
    return math.erf(math.sqrt(2.0) * L / sv) + (sv * _INV_SQRT_2PI / L) * math.expm1(-2.0 * L * L / v)


def gaussian_window_variance(t: float, L: float, xi: XiCurve, q: QuadratureSpec | None = None) -> float:
    """Variance of ``int_{-L}^{L} u(t, x) dx`` given the curve ``xi``.

    Equals ``2L int_0^t xi(r) int_0^{2L} p_{2(t-r)}(z) (2 - z/L) dz dr``; the
    inner integral has a closed form, the outer one is adaptive.
    """
    if not t > 0 or not L > 0:
        raise DomainError("window variance needs t > 0 and L > 0")
    q = q or QuadratureSpec()

    def f(r):
        return float(xi(r)) * _window_inner(2.0 * (t - r), L)

    # the inner factor behaves like 1 - c sqrt(t - r) near r = t
    pts = None
    knee = t - min(t, (L * L) / 2.0)
    if 0.0 < knee < t:
        pts = [knee]
    return 2.0 * L * _checked_quad(f, 0.0, t, q, "window variance", points=pts)


def lattice_second_moment(dx: float, dt: float, ncells: int, nsteps: int, kappa=None, c=None):
    """Exact ``E[u_n(0)**2]`` of the explicit periodic scheme, ``n = 0..nsteps``.

    Exactly one of ``kappa`` (``sigma = kappa u``) or ``c`` (``sigma = c``)
    must be given. The recursion tracks the two-point function
    ``C_n(d) = E[u_n(j) u_n(j + d)]``, which is closed under one step because
    the stencil is linear and the noise is independent of the past.
    """
    if (kappa is None) == (c is None):
        raise ConfigurationError("give exactly one of kappa or c")
    r = dt / (2.0 * dx * dx)
    b0 = 2.0 * r * r + (1.0 - 2.0 * r) ** 2
    b1 = 2.0 * r * (1.0 - 2.0 * r)
    b2 = r * r
    gain = dt / dx
    cov = np.ones(ncells)
    out = np.empty(nsteps + 1)
    out[0] = 1.0
    for n in range(nsteps):
        new = b0 * cov
        new += b1 * (np.roll(cov, 1) + np.roll(cov, -1))
        new += b2 * (np.roll(cov, 2) + np.roll(cov, -2))
        new[0] += gain * (kappa * kappa * cov[0] if kappa is not None else c * c)
        cov = new
        out[n + 1] = cov[0]
    return out
