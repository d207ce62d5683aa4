"""Lattice solvers for ``du = 0.5 u_xx dt + sigma(u) dW`` with ``u(0, .) = 1``.

Two discretizations share one noise source:

* :func:`solve_fd` marches the explicit scheme
  ``u[n+1, j] = u + r (u[j+1] - 2u + u[j-1]) + sigma(u) dW[n, j] / dx``
  with ``r = dt / (2 dx**2)`` on a periodic lattice.
* :func:`solve_mild` iterates the discrete Walsh sum
  ``u[n, j] = 1 + sum_{m<n} sum_{j'} K[n-m](j'-j) sigma(u[m, j']) dW[m, j']``.

The noise increment of cell ``(n, j)`` is ``sqrt(dt dx) Z`` where ``Z`` comes
from :mod:`shelab.rng` and depends only on ``(seed, stream, n, j)``.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping

import numba as nb
import numpy as np

from . import rng
from .errors import ConfigurationError, DataError, NumericalBlowupError, UsageError

__all__ = [
    "GridSpec",
    "ModelSpec",
    "NoiseField",
    "SolutionField",
    "generate_noise",
    "solve_fd",
    "solve_mild",
    "picard_iterates",
    "mild_radii",
    "march_ensemble",
    "EnsembleArrays",
    "window_span",
]


def _as_count(value: float, what: str) -> int:
    n = round(value)
    if n < 1 or abs(value - n) > 1e-9 * max(1.0, abs(value)):
        raise ConfigurationError(f"{what} must be a positive integer, got {value!r}")
    return int(n)


@dataclass(frozen=True)
class GridSpec:
    """Periodic space-time lattice.

    Cells sit at ``x_j = -M + j dx`` for ``j = 0..N-1`` with ``N = 2M/dx``;
    the origin is cell ``N // 2``. Times are ``t_n = n dt`` for ``n = 0..T/dt``.

    Parameters
    ----------
    dx, dt : float
        Space and time steps; ``dt <= dx**2`` is required for stability.
    half_width : float
        Half-length ``M`` of the periodic domain.
    horizon : float
        Final time ``T``.
    """

    dx: float
    dt: float
    half_width: float
    horizon: float

    def __post_init__(self):
        for name in ("dx", "dt", "half_width", "horizon"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ConfigurationError(f"{name} must be a positive finite number, got {v!r}")
        if self.dt > self.dx * self.dx * (1.0 + 1e-12):
            raise ConfigurationError(
                f"explicit scheme unstable: dt={self.dt} exceeds dx**2={self.dx * self.dx}"
            )
        _as_count(2.0 * self.half_width / self.dx, "2M/dx")
        _as_count(self.horizon / self.dt, "T/dt")
        if self.ncells < 5:
            raise ConfigurationError("the lattice needs at least 5 cells")

    @classmethod
    def standard(cls, dx: float, horizon: float, half_width: float) -> "GridSpec":
        """Grid with the default time step ``dt = dx**2 / 2``."""
        return cls(dx=dx, dt=dx * dx / 2.0, half_width=half_width, horizon=horizon)

    @classmethod
    def padded(cls, dx: float, horizon: float, reach: float, dt: float | None = None) -> "GridSpec":
        """Smallest grid whose half-width covers ``reach + 6 sqrt(T)``."""
        need = reach + 6.0 * math.sqrt(horizon)
        cells = math.ceil(need / dx - 1e-9)
        return cls(dx=dx, dt=dt if dt is not None else dx * dx / 2.0, half_width=cells * dx, horizon=horizon)

    @property
    def ncells(self) -> int:
        return round(2.0 * self.half_width / self.dx)

    @property
    def nsteps(self) -> int:
        return round(self.horizon / self.dt)

    @property
    def ratio(self) -> float:
        """Diffusion number ``r = dt / (2 dx**2)``."""
        return self.dt / (2.0 * self.dx * self.dx)

    @property
    def origin(self) -> int:
        return self.ncells // 2

    @property
    def x(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.ncells)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nsteps + 1)

    def cell_of(self, x: float) -> int:
        """Index of the cell at position ``x`` (must lie on the lattice)."""
        j = (x + self.half_width) / self.dx
        jr = round(j)
        if abs(j - jr) > 1e-6 or not 0 <= jr < self.ncells:
            raise ConfigurationError(f"position {x} is not a lattice point")
        return int(jr)

    def step_of(self, t: float) -> int:
        """Index of the time level ``t`` (must lie on the lattice)."""
        n = t / self.dt
        nr = round(n)
        if abs(n - nr) > 1e-6 or not 0 <= nr <= self.nsteps:
            raise ConfigurationError(f"time {t} is not a lattice time")
        return int(nr)

    def check_pad(self, reach: float) -> None:
        """Require ``M >= reach + 6 sqrt(T)`` so wrap-around stays negligible."""
        need = reach + 6.0 * math.sqrt(self.horizon)
        if self.half_width < need - 1e-9:
            raise ConfigurationError(
                f"half-width {self.half_width} is below reach {reach} + 6 sqrt(T) = {need:.4g}"
            )


@nb.njit(cache=True)
def _zero_sigma(u):
    return 0.0


@nb.njit(cache=True)
def _unused_sigma(u):
    return u


_LINEAR, _CONSTANT, _CUSTOM = 0, 1, 2


@dataclass(frozen=True)
class ModelSpec:
    """Noise coefficient ``sigma`` together with its growth constants.

    Attributes
    ----------
    kind : str
        ``"pam"``, ``"scaled-pam"``, ``"constant"`` or ``"custom"``.
    lip, lower : float
        Lipschitz constant and ``inf |sigma(w) / w|``.
    kappa : float
        Slope of the linear kinds.
    const : float
        Value of the constant kind.
    sigma : callable, optional
        A numba-jitted scalar function, custom kind only.
    name : str
        Label used in reports.
    reference_only, test_only : bool
        Flags for models outside the positivity class.
    """

    kind: str
    lip: float
    lower: float
    kappa: float = 1.0
    const: float = 0.0
    sigma: Callable | None = field(default=None, compare=False, repr=False)
    name: str = ""
    reference_only: bool = False
    test_only: bool = False

    def __post_init__(self):
        if self.kind not in ("pam", "scaled-pam", "constant", "custom"):
            raise ConfigurationError(f"unknown sigma kind {self.kind!r}")
        if self.kind == "constant":
            if not self.reference_only:
                raise ConfigurationError("constant sigma must be flagged reference_only")
            return
        if self.kind == "custom" and self.sigma is None:
            raise ConfigurationError("custom kind needs a jitted sigma function")
        if self.test_only:
            return
        if not 0 < self.lower <= self.lip:
            raise ConfigurationError(f"need 0 < lower <= lip, got lower={self.lower}, lip={self.lip}")
        if self.kind == "custom" and self.sigma(0.0) != 0.0:
            raise ConfigurationError("sigma(0) must vanish")

    @classmethod
    def pam(cls) -> "ModelSpec":
        return cls("pam", 1.0, 1.0, kappa=1.0, name="pam")

    @classmethod
    def scaled_pam(cls, kappa: float) -> "ModelSpec":
        k = abs(float(kappa))
        if k == 0:
            raise ConfigurationError("kappa must be non-zero")
        return cls("scaled-pam", k, k, kappa=float(kappa), name=f"pam(kappa={kappa:g})")

    @classmethod
    def constant(cls, c: float = 1.0) -> "ModelSpec":
        return cls("constant", 0.0, 0.0, const=float(c), name=f"constant({c:g})", reference_only=True)

    @classmethod
    def zero(cls) -> "ModelSpec":
        """Degenerate ``sigma = 0``; only meaningful in tests."""
        return cls("custom", 0.0, 0.0, sigma=_zero_sigma, name="zero", test_only=True)

    @classmethod
    def custom(cls, sigma: Callable, lip: float, lower: float, name: str = "custom") -> "ModelSpec":
        if not hasattr(sigma, "py_func"):
            raise ConfigurationError("custom sigma must be a numba.njit function")
        return cls("custom", float(lip), float(lower), sigma=sigma, name=name)

    def engine_args(self):
        """``(code, coefficient, function)`` triple consumed by the jitted kernels."""
        if self.kind in ("pam", "scaled-pam"):
            return _LINEAR, float(self.kappa), _unused_sigma
        if self.kind == "constant":
            return _CONSTANT, float(self.const), _unused_sigma
        return _CUSTOM, 0.0, self.sigma

    def __call__(self, u):
        code, a, fn = self.engine_args()
        u = np.asarray(u, dtype=float)
        out = np.empty(u.size)
        _sigma_array(u.ravel(), code, a, fn, out)
        return out.reshape(u.shape)


@nb.njit(inline="always", cache=True)
def _sigma(u, code, a, fn):
    if code == 0:
        return a * u
    if code == 1:
        return a
    return fn(u)


@nb.njit(cache=True)
def _sigma_array(u, code, a, fn, out):
    for i in range(u.shape[0]):
        out[i] = _sigma(u[i], code, a, fn)


@dataclass(frozen=True)
class NoiseField:
    """Counter-based white-noise increments on a grid.

    The standard normal attached to cell ``(n, j)`` is a pure function of
    ``(seed, stream, n, j)``; :attr:`overrides` replaces chosen cells with
    given standard-normal values (used for perturbation experiments).
    """

    grid: GridSpec
    seed: int
    stream: int = 0
    overrides: tuple = ()

    def __post_init__(self):
        rng.split_seed(self.seed)
        if not 0 <= int(self.stream) < 2**32:
            raise ConfigurationError("stream must fit in 32 bits")

    @property
    def key(self):
        return rng.split_seed(self.seed)

    @property
    def scale(self) -> float:
        """Standard deviation ``sqrt(dt dx)`` of one increment."""
        return math.sqrt(self.grid.dt * self.grid.dx)

    def with_overrides(self, values: Mapping) -> "NoiseField":
        """Copy with ``{(n, j): z}`` standard-normal values substituted."""
        merged = dict(self.overrides)
        for (n, j), z in values.items():
            if not (0 <= n < self.grid.nsteps and 0 <= j < self.grid.ncells):
                raise ConfigurationError(f"override cell {(n, j)} outside the lattice")
            merged[(int(n), int(j))] = float(z)
        return replace(self, overrides=tuple(sorted(merged.items())))

    def standard_normals(self, n_idx, j_idx) -> np.ndarray:
        n_idx = np.asarray(n_idx, dtype=np.int64)
        j_idx = np.asarray(j_idx, dtype=np.int64)
        if np.any(n_idx >= self.grid.nsteps) or np.any(j_idx >= self.grid.ncells):
            raise IndexError("noise index outside the lattice")
        z = rng.normals(self.seed, self.stream, n_idx, j_idx)
        if self.overrides:
            z = np.array(z, dtype=float, copy=True)
            nb_, jb_ = np.broadcast_arrays(n_idx, j_idx)
            for (n, j), v in self.overrides:
                z[(nb_ == n) & (jb_ == j)] = v
        return z

    def increment(self, n: int, j: int) -> float:
        """Increment ``dW`` of cell ``(n, j)``, distributed ``N(0, dt dx)``."""
        return float(self.standard_normals(n, j)) * self.scale

    def increments(self, n_idx, j_idx) -> np.ndarray:
        return self.standard_normals(n_idx, j_idx) * self.scale

    def normal_array(self) -> np.ndarray:
        """All standard normals, shape ``(nsteps, ncells)``."""
        g = self.grid
        out = np.empty((g.nsteps, g.ncells))
        k0, k1 = self.key
        _fill_normals(out, k0, k1, int(self.stream))
        for (n, j), v in self.overrides:
            out[n, j] = v
        return out

    def array(self) -> np.ndarray:
        """All increments ``dW``, shape ``(nsteps, ncells)``."""
        return self.normal_array() * self.scale


@nb.njit(cache=True)
def _fill_normals(out, k0, k1, stream):
    words, flags = rng.row_scratch(out.shape[1])
    for n in range(out.shape[0]):
        rng.normal_row(out[n], words, flags, n, k0, k1, stream)


def generate_noise(grid: GridSpec, seed: int, stream: int = 0) -> NoiseField:
    """Noise field for ``grid`` keyed by ``seed`` (and a replica ``stream``)."""
    return NoiseField(grid, int(seed), int(stream))


@dataclass
class SolutionField:
    """Lattice field ``u(t_n, x_j)`` at the recorded time indices.

    Attributes
    ----------
    values : ndarray, shape (len(steps), ncells)
    steps : ndarray of int
        Recorded time indices (ascending, starting at 0).
    localization : tuple or None
        ``(c, depth)`` for localized fields, ``None`` for full solutions.
    negative_count : int
        Number of negative lattice values encountered while marching.
    """

    grid: GridSpec
    model: ModelSpec
    values: np.ndarray
    steps: np.ndarray
    localization: tuple | None = None
    negative_count: int = 0
    seed: int | None = None
    stream: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.steps = np.asarray(self.steps, dtype=np.int64)
        if self.values.shape != (self.steps.size, self.grid.ncells):
            raise DataError("values must have shape (len(steps), ncells)")
        if self.steps.size and self.steps[0] == 0 and not np.all(self.values[0] == 1.0):
            raise DataError("initial row must be identically 1")
        if not np.all(np.isfinite(self.values)):
            raise DataError("field contains non-finite values")

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.grid.dt

    def row(self, t: float) -> np.ndarray:
        n = self.grid.step_of(t)
        hit = np.nonzero(self.steps == n)[0]
        if hit.size == 0:
            raise UsageError(f"time {t} was not recorded")
        return self.values[hit[0]]

    def value(self, t: float, x: float) -> float:
        return float(self.row(t)[self.grid.cell_of(x)])

    def to_csv(self, path) -> Path:
        """Write columns ``t,x,u`` (one line per lattice value)."""
        path = Path(path)
        tt = np.repeat(self.times, self.grid.ncells)
        xx = np.tile(self.grid.x, self.steps.size)
        data = np.column_stack([tt, xx, self.values.ravel()])
        np.savetxt(path, data, delimiter=",", header="t,x,u", comments="", fmt="%.17g")
        return path

    _MAGIC = b"SHEF"

    def to_binary(self, path) -> Path:
        """Write a little-endian dump.

        Layout: ``b"SHEF"``, uint32 version 1, float64 ``dx, dt, M, T``,
        uint64 row count ``R`` and cell count ``N``, ``R`` uint64 time indices,
        then ``R * N`` float64 values in row-major time-by-space order.
        """
        path = Path(path)
        g = self.grid
        with open(path, "wb") as fh:
            fh.write(self._MAGIC)
            fh.write(struct.pack("<I4dQQ", 1, g.dx, g.dt, g.half_width, g.horizon, self.steps.size, g.ncells))
            fh.write(self.steps.astype("<u8").tobytes())
            fh.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        return path

    @staticmethod
    def read_binary(path):
        """Return ``(grid, steps, values)`` from :meth:`to_binary` output."""
        raw = Path(path).read_bytes()
        if raw[:4] != SolutionField._MAGIC:
            raise DataError("not a field dump")
        head = struct.calcsize("<I4dQQ")
        version, dx, dt, m, t, nrow, ncell = struct.unpack("<I4dQQ", raw[4 : 4 + head])
        if version != 1:
            raise DataError(f"unsupported dump version {version}")
        off = 4 + head
        steps = np.frombuffer(raw, dtype="<u8", count=nrow, offset=off).astype(np.int64)
        off += 8 * nrow
        values = np.frombuffer(raw, dtype="<f8", count=nrow * ncell, offset=off).reshape(nrow, ncell)
        return GridSpec(dx, dt, m, t), steps, values.copy()

    def digest(self) -> str:
        return hashlib.sha256(np.ascontiguousarray(self.values).tobytes()).hexdigest()


# --------------------------------------------------------------------------
# explicit scheme


@nb.njit(inline="always", cache=True)
def _fd_cell(um, uj, up, z, r, gain, sj, v, j):
    w = uj + r * (um - 2.0 * uj + up) + sj * (z * gain)
    v[j] = w
    return (w < 0.0), not abs(w) <= 1.7e308


@nb.njit(inline="always", cache=True)
def _fd_range(u, v, z, zoff, j0, j1, r, gain, code, a, fn):
    # cells j0 <= j < j1, noise z[j - zoff]; the sigma dispatch is hoisted out
    # of the cell loop so the interior loop stays branch-free
    n = u.shape[0]
    neg = 0
    bad = 0
    if j0 == 0:
        e0, e1 = _fd_cell(u[n - 1], u[0], u[1], z[0 - zoff], r, gain, _sigma(u[0], code, a, fn), v, 0)
        neg += e0
        bad += e1
    if j1 == n:
        e0, e1 = _fd_cell(u[n - 2], u[n - 1], u[0], z[n - 1 - zoff], r, gain, _sigma(u[n - 1], code, a, fn),
                          v, n - 1)
        neg += e0
        bad += e1
    lo = max(j0, 1)
    hi = min(j1, n - 1)
    if hi > lo:
        # zero-based views let the compiler drop negative-index handling
        e0, e1 = _fd_run(u[lo - 1:hi + 1], v[lo:hi], z[lo - zoff:hi - zoff], r, gain, code, a, fn)
        neg += e0
        bad += e1
    return neg, bad


@nb.njit(inline="always", cache=True)
def _fd_run(uu, vv, zz, r, gain, code, a, fn):
    neg = 0
    bad = 0
    if code == 0:
        for i in range(vv.shape[0]):
            e0, e1 = _fd_cell(uu[i], uu[i + 1], uu[i + 2], zz[i], r, gain, a * uu[i + 1], vv, i)
            neg += e0
            bad += e1
    elif code == 1:
        for i in range(vv.shape[0]):
            e0, e1 = _fd_cell(uu[i], uu[i + 1], uu[i + 2], zz[i], r, gain, a, vv, i)
            neg += e0
            bad += e1
    else:
        for i in range(vv.shape[0]):
            e0, e1 = _fd_cell(uu[i], uu[i + 1], uu[i + 2], zz[i], r, gain, fn(uu[i + 1]), vv, i)
            neg += e0
            bad += e1
    return neg, bad


@nb.njit(cache=True)
def _fd_step(u, v, z, r, gain, code, a, fn):
    # returns (negative values, non-finite values)
    return _fd_range(u, v, z, 0, 0, u.shape[0], r, gain, code, a, fn)


# Philox blocks (four cells each) per fused tile; keeps the noise tile in L1/L2
_TILE = 1024


@nb.njit(cache=True)
def _fused_step(u, v, z, words, flags, n, k0, k1, stream, r, gain, code, a, fn):
    # generate noise tile by tile and update the same cells right away
    ncell = u.shape[0]
    nblk = (ncell + 3) // 4
    neg = 0
    bad = 0
    for b0 in range(0, nblk, _TILE):
        nb_ = min(_TILE, nblk - b0)
        rng.normal_blocks(z, words, flags, n, k0, k1, stream, b0, nb_, ncell)
        j0 = 4 * b0
        e0, e1 = _fd_range(u, v, z, j0, j0, min(j0 + 4 * nb_, ncell), r, gain, code, a, fn)
        neg += e0
        bad += e1
    return neg, bad


@nb.njit(cache=True)
def _first_bad(v):
    for j in range(v.shape[0]):
        if not np.isfinite(v[j]):
            return j
    return 0


@nb.njit(cache=True)
def _fd_field(z, rec, r, gain, code, a, fn, out, status):
    # march from a stored normal array; out[k] receives time index rec[k]
    n = z.shape[1]
    u = np.ones(n)
    v = np.empty(n)
    k = 0
    while k < rec.shape[0] and rec[k] == 0:
        out[k, :] = u
        k += 1
    neg = 0
    for step in range(z.shape[0]):
        dn, nbad = _fd_step(u, v, z[step], r, gain, code, a, fn)
        neg += dn
        if nbad:
            status[0] = step + 1
            status[1] = _first_bad(v)
            return neg
        u, v = v, u
        while k < rec.shape[0] and rec[k] == step + 1:
            out[k, :] = u
            k += 1
    return neg


def _record_steps(grid: GridSpec, record) -> np.ndarray:
    if record is None:
        return np.arange(grid.nsteps + 1, dtype=np.int64)
    steps = sorted({grid.step_of(float(t)) for t in np.atleast_1d(record)} | {0})
    return np.asarray(steps, dtype=np.int64)


def _check_noise(grid, model, noise):
    if noise.grid != grid:
        raise UsageError("noise field was generated for a different grid")
    if not isinstance(model, ModelSpec):
        raise UsageError("model must be a ModelSpec")


def solve_fd(grid: GridSpec, model: ModelSpec, noise: NoiseField, record=None) -> SolutionField:
    """March the explicit periodic scheme.

    Parameters
    ----------
    grid, model, noise
        Lattice, noise coefficient, and driving noise (``noise.grid == grid``).
    record : sequence of float, optional
        Times to keep; all time levels by default. Time 0 is always kept.

    Raises
    ------
    NumericalBlowupError
        If the march produces a non-finite value.
    """
    _check_noise(grid, model, noise)
    rec = _record_steps(grid, record)
    z = noise.normal_array()
    out = np.empty((rec.size, grid.ncells))
    status = np.zeros(2, dtype=np.int64)
    code, a, fn = model.engine_args()
    gain = math.sqrt(grid.dt / grid.dx)
    neg = _fd_field(z, rec, grid.ratio, gain, code, a, fn, out, status)
    if status[0]:
        raise NumericalBlowupError(status[0], status[1])
    return SolutionField(grid, model, out, rec, None, int(neg), noise.seed, noise.stream)


@dataclass
class EnsembleArrays:
    """Raw per-replica output of :func:`march_ensemble`.

    Attributes
    ----------
    probes : ndarray, shape (R, S, P)
        ``u`` at each probe cell and recorded step.
    deviations : ndarray, shape (R, S, F)
        Window integrals of ``u - 1``.
    power_sums : ndarray, shape (R, S, Q)
        ``sum_j u[j]**q`` over all cells for ``q = 1..Q``.
    negatives : ndarray, shape (R,)
        Negative lattice values met while marching.
    """

    probes: np.ndarray
    deviations: np.ndarray
    power_sums: np.ndarray
    negatives: np.ndarray


@nb.njit(cache=True)
def _record(u, rk, ri, probes, span, ends, dx, out_p, out_f, out_q):
    for p in range(probes.shape[0]):
        out_p[ri, rk, p] = u[probes[p]]
    for f in range(span.shape[1]):
        jl = span[rk, f, 0]
        jh = span[rk, f, 1]
        mid = 0.0
        for j in range(jl + 1, jh):
            mid += u[j] - 1.0
        out_f[ri, rk, f] = ends[rk, f, 0] * (u[jl] - 1.0) + ends[rk, f, 1] * (u[jh] - 1.0) + dx * mid
    nq = out_q.shape[2]
    if nq > 0:
        for j in range(u.shape[0]):
            x = u[j]
            y = x
            for q in range(nq):
                out_q[ri, rk, q] += y
                y *= x


@nb.njit(cache=True)
def _ensemble(nsteps, ncell, r, gain, dx, code, a, fn, k0, k1, streams, rec, probes, span, ends,
              out_p, out_f, out_q, out_neg, out_bad):
    u0 = np.empty(ncell)
    v0 = np.empty(ncell)
    z = np.empty(4 * _TILE)
    words, flags = rng.row_scratch(4 * _TILE)
    for ri in range(streams.shape[0]):
        u = u0
        v = v0
        u[:] = 1.0
        k = 0
        while k < rec.shape[0] and rec[k] == 0:
            _record(u, k, ri, probes, span, ends, dx, out_p, out_f, out_q)
            k += 1
        neg = 0
        for step in range(nsteps):
            if k >= rec.shape[0]:
                break
            dn, nbad = _fused_step(u, v, z, words, flags, step, k0, k1, streams[ri], r, gain, code, a, fn)
            neg += dn
            if nbad:
                out_bad[0] = ri
                out_bad[1] = step + 1
                out_bad[2] = _first_bad(v)
                return
            u, v = v, u
            while k < rec.shape[0] and rec[k] == step + 1:
                _record(u, k, ri, probes, span, ends, dx, out_p, out_f, out_q)
                k += 1
        out_neg[ri] = neg


def window_span(grid: GridSpec, L: float):
    """Cells meeting ``[-L, L]`` as ``((j_lo, j_hi), (w_lo, w_hi))``.

    Cells strictly between ``j_lo`` and ``j_hi`` have weight ``dx``; the end
    cells carry their overlap length, so the weights add up to ``2L``.
    """
    if not L >= grid.dx:
        raise ConfigurationError(f"window half-length {L} is below one cell ({grid.dx})")
    if L > grid.half_width - grid.dx:
        raise ConfigurationError(f"window half-length {L} exceeds the domain")
    o = grid.origin
    # cell o + k covers [(k - 1/2) dx, (k + 1/2) dx]; the end cell is the last one starting below L
    k = max(math.ceil(L / grid.dx - 0.5), 1)
    w_end = min(L - (k - 0.5) * grid.dx, grid.dx)
    return (o - k, o + k), (w_end, w_end)


def march_ensemble(grid: GridSpec, model: ModelSpec, seed: int, streams, record_steps,
                   probes=(), windows=None, powers: int = 0) -> EnsembleArrays:
    """Run the explicit scheme for many replicas and keep summaries only.

    Replica ``i`` is driven by ``NoiseField(grid, seed, streams[i])`` and is
    bit-identical to :func:`solve_fd` on that noise field.

    Parameters
    ----------
    record_steps : sequence of int
        Ascending time indices at which to record.
    probes : sequence of int
        Cell indices whose values are kept.
    windows : array_like, shape (S, F), optional
        Half-lengths of the centred windows integrated at each recorded step.
    powers : int
        Keep ``sum_j u**q`` for ``q = 1..powers``.
    """
    streams = np.ascontiguousarray(streams, dtype=np.int64)
    rec = np.ascontiguousarray(record_steps, dtype=np.int64)
    if rec.size == 0 or np.any(np.diff(rec) <= 0) or rec[0] < 0 or rec[-1] > grid.nsteps:
        raise ConfigurationError("record steps must be ascending lattice time indices")
    probes = np.ascontiguousarray(probes, dtype=np.int64)
    if np.any((probes < 0) | (probes >= grid.ncells)):
        raise ConfigurationError("probe cell outside the lattice")
    win = np.zeros((rec.size, 0)) if windows is None else np.asarray(windows, dtype=float)
    if win.ndim != 2 or win.shape[0] != rec.size:
        raise ConfigurationError("windows must have shape (len(record_steps), F)")
    span = np.zeros(win.shape + (2,), dtype=np.int64)
    ends = np.zeros(win.shape + (2,))
    for idx in np.ndindex(*win.shape):
        span[idx], ends[idx] = window_span(grid, float(win[idx]))
    nr = streams.size
    out_p = np.empty((nr, rec.size, probes.size))
    out_f = np.empty((nr, rec.size, win.shape[1]))
    out_q = np.zeros((nr, rec.size, int(powers)))
    out_neg = np.zeros(nr, dtype=np.int64)
    out_bad = np.full(3, -1, dtype=np.int64)
    code, a, fn = model.engine_args()
    k0, k1 = rng.split_seed(seed)
    _ensemble(grid.nsteps, grid.ncells, grid.ratio, math.sqrt(grid.dt / grid.dx), grid.dx, code, a, fn,
              k0, k1, streams, rec, probes, span, ends, out_p, out_f, out_q, out_neg, out_bad)
    if out_bad[0] >= 0:
        raise NumericalBlowupError(out_bad[1], out_bad[2],
                                   f"non-finite value in replica stream {streams[out_bad[0]]} "
                                   f"at time index {out_bad[1]}, cell {out_bad[2]}")
    return EnsembleArrays(out_p, out_f, out_q, out_neg)


# --------------------------------------------------------------------------
# mild form


def _lattice_green(r: float, nsteps: int, width: int) -> np.ndarray:
    # G[k] = A^(k-1) delta on offsets -width..width, free space
    pad = width + 2
    g = np.zeros(2 * (width + pad) + 1)
    g[width + pad] = 1.0
    out = np.empty((nsteps + 1, 2 * width + 1))
    out[0] = 0.0
    c0, c1 = 1.0 - 2.0 * r, r
    for k in range(1, nsteps + 1):
        out[k] = g[pad : pad + 2 * width + 1]
        nxt = c0 * g
        nxt[1:] += c1 * g[:-1]
        nxt[:-1] += c1 * g[1:]
        g = nxt
    return out


def mild_radii(grid: GridSpec, window: Callable[[float], float] | None):
    """Cell radii used by the mild scheme.

    Returns
    -------
    radii : ndarray of int, shape (nsteps + 1,)
        Window half-width in cells around the target at each time index.
    trunc : ndarray of int, shape (nsteps + 1,)
        Kernel truncation half-width at each lag index ``k``, i.e.
        ``floor((6 sqrt(k dt) + dx) / dx)`` capped below half the period.
    """
    cap = (grid.ncells - 1) // 2
    lags = np.arange(grid.nsteps + 1) * grid.dt
    trunc = np.minimum(np.floor((6.0 * np.sqrt(lags) + grid.dx) / grid.dx + 1e-9), cap).astype(np.int64)
    if window is None:
        radii = np.full(grid.nsteps + 1, cap, dtype=np.int64)
    else:
        rad = np.array([float(window(t)) for t in grid.times])
        if np.any(rad < 0) or not np.all(np.isfinite(rad)):
            raise ConfigurationError("window radius must be finite and non-negative")
        radii = np.minimum(np.floor(rad / grid.dx + 1e-9), cap).astype(np.int64)
    return radii, trunc


def _kernel_table(grid: GridSpec, kernel: str, width: int) -> np.ndarray:
    if kernel == "heat":
        k = np.arange(grid.nsteps + 1)[:, None]
        d = np.arange(-width, width + 1)[None, :] * grid.dx
        lag = np.maximum(k - 0.5, 0.5) * grid.dt
        tab = np.exp(-d * d / (2.0 * lag)) / np.sqrt(2.0 * np.pi * lag)
        tab[0] = 0.0
        return tab
    if kernel == "lattice":
        return _lattice_green(grid.ratio, grid.nsteps, width) / grid.dx
    raise ConfigurationError(f"unknown mild kernel {kernel!r}")


@nb.njit(cache=True)
def _walsh_level(s_pad, pad, ktab, kw, radii, trunc, out):
    nsteps = s_pad.shape[0]
    ncell = out.shape[1]
    out[0, :] = 1.0
    for n in range(1, nsteps + 1):
        rn = radii[n]
        for j in range(ncell):
            acc = 0.0
            for m in range(n):
                k = n - m
                rad = min(rn, trunc[k])
                row = s_pad[m]
                kr = ktab[k]
                for d in range(-rad, rad + 1):
                    acc += kr[kw + d] * row[pad + j + d]
            out[n, j] = 1.0 + acc


def picard_iterates(grid: GridSpec, model: ModelSpec, noise: NoiseField, window=None,
                    depth: int = 8, kernel: str = "heat") -> list:
    """Picard iterates of the discrete Walsh sum at depths ``1..depth``.

    Parameters
    ----------
    window : callable, optional
        ``t -> radius`` (length) of the summation window around each target
        point; ``None`` sums over the whole period (kernel-truncated).
    kernel : {"heat", "lattice"}
        ``"heat"`` uses ``p`` at lag ``(k - 1/2) dt``; ``"lattice"`` uses the
        ``(k-1)``-step Green's function of the explicit scheme divided by
        ``dx``, which makes the full-window iteration converge to
        :func:`solve_fd` on the same noise.

    Returns
    -------
    list of ndarray
        ``depth`` arrays of shape ``(nsteps + 1, ncells)``.
    """
    _check_noise(grid, model, noise)
    if int(depth) != depth or depth < 0:
        raise ConfigurationError("picard depth must be a non-negative integer")
    radii, trunc = mild_radii(grid, window)
    width = int(max(trunc.max(), 1))
    ktab = np.ascontiguousarray(_kernel_table(grid, kernel, width))
    dw = noise.array()
    code, a, fn = model.engine_args()
    n, ncell = grid.nsteps, grid.ncells
    prev = np.ones((n + 1, ncell))
    sig = np.empty(n * ncell)
    levels = []
    for _ in range(int(depth)):
        _sigma_array(prev[:-1].ravel(), code, a, fn, sig)
        s = sig.reshape(n, ncell) * dw
        s_pad = np.concatenate([s[:, ncell - width :], s, s[:, :width]], axis=1) if width <= ncell else None
        if s_pad is None:
            s_pad = np.take(s, np.arange(-width, ncell + width) % ncell, axis=1)
        cur = np.empty((n + 1, ncell))
        _walsh_level(np.ascontiguousarray(s_pad), width, ktab, width, radii, trunc, cur)
        if not np.all(np.isfinite(cur)):
            bad = np.argwhere(~np.isfinite(cur))[0]
            raise NumericalBlowupError(bad[0], bad[1])
        levels.append(cur)
        prev = cur
    return levels


def solve_mild(grid: GridSpec, model: ModelSpec, noise: NoiseField, window=None,
               depth: int = 8, kernel: str = "heat", localization=None) -> SolutionField:
    """Mild-form solution at the given Picard depth (depth 0 gives ``u = 1``).

    See :func:`picard_iterates` for the meaning of ``window`` and ``kernel``.
    """
    _check_noise(grid, model, noise)
    steps = np.arange(grid.nsteps + 1, dtype=np.int64)
    if depth == 0:
        vals = np.ones((grid.nsteps + 1, grid.ncells))
    else:
        vals = picard_iterates(grid, model, noise, window, depth, kernel)[-1]
    return SolutionField(grid, model, vals, steps, localization, int(np.sum(vals < 0)), noise.seed, noise.stream)
