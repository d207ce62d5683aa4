"""Monte Carlo ensembles over time schedules and the limit diagnostics.

An ensemble marches independent replicas of the explicit scheme and keeps,
at each scheduled time, probe values, window integrals and optional spatial
power sums. Replica ``i`` uses noise stream ``first_stream + i`` under the base
seed, so results do not depend on how replicas are split across workers.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from multiprocessing import get_context
from pathlib import Path

import numpy as np
from scipy import integrate, stats

from .errors import ConfigurationError, DataError, UsageError
from .exponents import GammaCurve, ThresholdReport, thresholds as compute_thresholds
from .kernel import XiCurve, gaussian_window_variance
from .solver import EnsembleArrays, GridSpec, ModelSpec, march_ensemble
from .windows import window_length

__all__ = [
    "EnsembleConfig",
    "EnsembleResult",
    "FStatistic",
    "TestReport",
    "HolderEstimate",
    "GRID_PRESETS",
    "run_ensemble",
    "f_statistic",
    "jackknife_variance",
    "ks_normal",
    "limit_diagnostics",
    "holder_exponent",
    "time_paths",
    "resolve_workers",
    "weakly_decreasing",
    "xi_for",
]

STATISTICS = ("mean", "moments", "window", "f")
VARIANCE_SOURCES = ("exact-oracle", "mc-cross-replica")
DIAGNOSTICS = ("wlln", "slln", "clt", "clt-fail", "variance-ratio", "holder")
WORKERS_ENV = "SHELAB_WORKERS"

# name -> dx; every preset uses dt = dx**2 / 2
GRID_PRESETS = {"fine": 0.02, "standard": 0.05, "coarse": 0.1, "desk": 0.25}

# sd of sqrt(n) * D under the null, large n
_KS_SD = 0.2605


def resolve_workers(workers=None) -> int:
    """Worker count from the argument, else ``$SHELAB_WORKERS``, else 1."""
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise ConfigurationError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if int(workers) != workers or workers < 1:
        raise ConfigurationError(f"worker count must be a positive integer, got {workers}")
    return int(workers)


def xi_for(model: ModelSpec) -> XiCurve | None:
    """Exact ``xi`` curve of a model, or None when no closed form is known."""
    if model.kind in ("pam", "scaled-pam"):
        return XiCurve.pam(model.kappa)
    if model.kind == "constant":
        return XiCurve.constant(model.const)
    return None


def _pairwise_mean(a: np.ndarray) -> np.ndarray:
    # move the replica axis last so numpy reduces it pairwise in a fixed order
    return np.ascontiguousarray(np.moveaxis(a, 0, -1)).mean(axis=-1)


def _se(a: np.ndarray) -> np.ndarray:
    n = a.shape[0]
    return np.ascontiguousarray(np.moveaxis(a, 0, -1)).std(axis=-1, ddof=1) / math.sqrt(n)


@dataclass(frozen=True)
class EnsembleConfig:
    """Everything that determines an ensemble run.

    Parameters
    ----------
    grid, model : GridSpec, ModelSpec
    times : sequence of float
        Strictly increasing lattice times at which statistics are recorded.
    replicas : int
        Number of independent replicas, at least 2.
    seed : int
        Base seed; replica ``i`` uses stream ``first_stream + i``.
    lam : float, optional
        Window growth rate; adds the window ``L(t) = exp(lam t)``.
    half_lengths : sequence of float
        Fixed window half-lengths recorded at every time.
    probes : sequence of float
        Lattice positions whose values are kept.
    moments : sequence of float
        Orders ``p`` for the probe moment statistic.
    statistics : sequence of str
        Subset of ``mean``, ``moments``, ``window`` and ``f``.
    variance_source : str
        ``exact-oracle`` or ``mc-cross-replica``, used by the ``f`` statistic.
    powers : int
        Also keep spatial means of ``u**q`` for ``q = 1..powers``.
    """

    grid: GridSpec
    model: ModelSpec
    times: tuple
    replicas: int
    seed: int = 0
    lam: float | None = None
    half_lengths: tuple = ()
    probes: tuple = (0.0,)
    moments: tuple = (2.0,)
    statistics: tuple = ("mean", "window", "f")
    variance_source: str = "exact-oracle"
    powers: int = 0
    first_stream: int = 0

    def __post_init__(self):
        ts = tuple(float(t) for t in self.times)
        object.__setattr__(self, "times", ts)
        object.__setattr__(self, "half_lengths", tuple(float(x) for x in self.half_lengths))
        object.__setattr__(self, "probes", tuple(float(x) for x in self.probes))
        object.__setattr__(self, "moments", tuple(float(x) for x in self.moments))
        object.__setattr__(self, "statistics", tuple(self.statistics))
        if int(self.replicas) != self.replicas or self.replicas < 2:
            raise ConfigurationError(f"replica count must be an integer >= 2, got {self.replicas}")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")
        if self.first_stream < 0:
            raise ConfigurationError("first_stream must be non-negative")
        if not ts or any(b <= a for a, b in zip(ts, ts[1:])):
            raise ConfigurationError("times must be a non-empty, strictly increasing sequence")
        for t in ts:
            self.grid.step_of(t)
        bad = [s for s in self.statistics if s not in STATISTICS]
        if bad:
            raise ConfigurationError(f"unknown statistic {bad[0]!r}; choose from {', '.join(STATISTICS)}")
        if self.variance_source not in VARIANCE_SOURCES:
            raise ConfigurationError(
                f"unknown variance source {self.variance_source!r}; choose from {', '.join(VARIANCE_SOURCES)}"
            )
        if self.lam is not None and not self.lam > 0:
            raise ConfigurationError(f"window rate lam must be positive, got {self.lam}")
        if any(p <= 0 for p in self.moments):
            raise ConfigurationError("moment orders must be positive")
        if int(self.powers) != self.powers or self.powers < 0:
            raise ConfigurationError("powers must be a non-negative integer")
        needs_window = {"window", "f"} & set(self.statistics)
        if needs_window and self.lam is None and not self.half_lengths:
            raise ConfigurationError("window statistics need lam or half_lengths")
        if "f" in self.statistics:
            if ts[0] <= 0:
                raise ConfigurationError("the f statistic needs t > 0")
            if self.variance_source == "exact-oracle" and xi_for(self.model) is None:
                raise ConfigurationError(
                    f"no exact variance oracle for model {self.model.name!r}; use variance_source=mc-cross-replica"
                )
        if {"mean", "moments"} & set(self.statistics) and not self.probes:
            raise ConfigurationError("probe statistics need at least one probe")
        pad = 6.0 * math.sqrt(self.grid.horizon)
        for t, row in zip(ts, self.window_table()):
            for L in row:
                if L < self.grid.dx:
                    raise ConfigurationError(f"window L={L:.6g} at t={t:g} is shorter than one cell")
                if L + pad > self.grid.half_width + 1e-9:
                    raise ConfigurationError(
                        f"window overflow at t={t:g}: L={L:.6g} plus pad 6*sqrt(T)={pad:.4g} "
                        f"exceeds the half-domain M={self.grid.half_width:g}"
                    )
        for x in self.probes:
            self.grid.cell_of(x)
            self.grid.check_pad(abs(x))

    @classmethod
    def preset_grid(cls, preset: str, horizon: float, reach: float) -> GridSpec:
        """Padded grid for a named resolution (see ``GRID_PRESETS``)."""
        if preset not in GRID_PRESETS:
            raise ConfigurationError(f"unknown grid preset {preset!r}; choose from {', '.join(GRID_PRESETS)}")
        return GridSpec.padded(GRID_PRESETS[preset], horizon, reach)

    def window_table(self) -> np.ndarray:
        """Half-lengths per time, shape ``(len(times), F)``; the ``lam`` window comes first."""
        cols = []
        if self.lam is not None:
            cols.append(np.array([float(window_length(self.lam, t)) for t in self.times]))
        for L in self.half_lengths:
            cols.append(np.full(len(self.times), L))
        if not cols:
            return np.zeros((len(self.times), 0))
        return np.column_stack(cols)

    def to_dict(self) -> dict:
        g, m = self.grid, self.model
        return {
            "grid": {"dx": g.dx, "dt": g.dt, "half_width": g.half_width, "horizon": g.horizon},
            "model": {"kind": m.kind, "kappa": m.kappa, "const": m.const, "name": m.name},
            "lam": self.lam,
            "times": list(self.times),
            "replicas": int(self.replicas),
            "seed": int(self.seed),
            "first_stream": int(self.first_stream),
            "half_lengths": list(self.half_lengths),
            "probes": list(self.probes),
            "moments": list(self.moments),
            "statistics": list(self.statistics),
            "variance_source": self.variance_source,
            "powers": int(self.powers),
        }


@dataclass(frozen=True)
class FStatistic:
    """Normalized window integrals and the variance used to normalize them."""

    values: np.ndarray
    variance: float
    source: str
    double_use: bool = False


def jackknife_variance(samples) -> float:
    """Jackknife estimate of the variance from leave-one-out plug-in variances."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 3:
        raise DataError("the jackknife needs at least 3 samples")
    d = x - x.mean()
    q = float(np.sum(d * d))
    full = q / n
    loo = (q - n * d * d / (n - 1)) / (n - 1)
    return float(n * full - (n - 1) * loo.mean())


def f_statistic(samples, variance, L: float, mean: float = 1.0) -> FStatistic:
    """``(sample - mean 2L) / sqrt(variance)`` for every replica.

    ``variance=None`` selects the jackknifed cross-replica variance of the
    samples themselves; the result is then flagged as double use of data.

    Raises
    ------
    DataError
        On a non-positive variance or non-finite samples.
    """
    x = np.asarray(samples, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DataError("window integrals contain non-finite values")
    if variance is None:
        variance, source, double = jackknife_variance(x), "mc-cross-replica", True
    else:
        source, double = "exact-oracle", False
    variance = float(variance)
    if not variance > 0:
        raise DataError(f"variance must be positive, got {variance}")
    return FStatistic((x - mean * 2.0 * L) / math.sqrt(variance), variance, source, double)


def ks_normal(samples):
    """One-sample Kolmogorov-Smirnov distance to N(0, 1) and its asymptotic p-value."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 8:
        raise DataError(f"need at least 8 samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise DataError("samples contain non-finite values")
    res = stats.ks_1samp(x, stats.norm.cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


# --------------------------------------------------------------------------
# ensembles

_JOB: dict = {}


def _march_chunk(streams) -> EnsembleArrays:
    j = _JOB
    return march_ensemble(j["grid"], j["model"], j["seed"], streams, j["rec"], probes=j["probes"],
                          windows=j["windows"], powers=j["powers"])


@dataclass
class EnsembleResult:
    """Per-replica records plus a summary table.

    Attributes
    ----------
    lengths : ndarray, shape (S, F)
        Window half-lengths per time.
    probe_values : ndarray, shape (R, S, P)
    deviations : ndarray, shape (R, S, F)
        Window integrals of ``u - 1``.
    averages : ndarray, shape (R, S, F)
        Window averages ``1 + deviation / 2L``.
    f_values : ndarray, shape (R, S, F), or None
    f_variance : ndarray, shape (S, F), or None
    rows : list of dict
        ``t, statistic, location, order, estimate, se, n`` per summary entry.
    """

    config: EnsembleConfig
    lengths: np.ndarray
    probe_values: np.ndarray
    deviations: np.ndarray
    averages: np.ndarray
    power_means: np.ndarray
    negatives: np.ndarray
    f_values: np.ndarray | None = None
    f_variance: np.ndarray | None = None
    f_double_use: bool = False
    rows: list = field(default_factory=list)

    @property
    def times(self) -> tuple:
        return self.config.times

    @property
    def replicas(self) -> int:
        return self.probe_values.shape[0]

    def table(self, statistic: str) -> list:
        return [r for r in self.rows if r["statistic"] == statistic]

    def negative_fraction(self) -> float:
        g = self.config.grid
        cells = g.ncells * g.step_of(self.config.times[-1]) * self.replicas
        return float(self.negatives.sum()) / cells if cells else 0.0

    def summary_csv(self) -> str:
        buf = io.StringIO()
        cols = ["t", "statistic", "location", "order", "estimate", "se", "n"]
        w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n")
        w.writeheader()
        for r in self.rows:
            w.writerow({k: _fmt(r[k]) for k in cols})
        return buf.getvalue()

    def raw_csv(self) -> str:
        """Per-replica window records: ``replica,stream,t,L,deviation,average,F``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replica", "stream", "t", "L", "deviation", "average", "F"])
        first = self.config.first_stream
        for i in range(self.replicas):
            for s, t in enumerate(self.times):
                for f in range(self.lengths.shape[1]):
                    fv = "" if self.f_values is None else _fmt(self.f_values[i, s, f])
                    w.writerow([i, first + i, _fmt(t), _fmt(self.lengths[s, f]), _fmt(self.deviations[i, s, f]),
                                _fmt(self.averages[i, s, f]), fv])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "replicas": self.replicas,
            "negative_count": int(self.negatives.sum()),
            "negative_fraction": self.negative_fraction(),
            "f_double_use": self.f_double_use,
            "rows": [{k: r[k] for k in r} for r in self.rows],
        }

    def to_csv(self, path) -> Path:
        path = Path(path)
        path.write_text(self.summary_csv())
        return path

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return "" if v is None else str(v)


def run_ensemble(config: EnsembleConfig, workers: int | None = None) -> EnsembleResult:
    """March all replicas and summarize the requested statistics.

    Replicas are split into contiguous chunks, one per worker, and gathered
    in order; every replica is a pure function of ``(seed, stream)`` so the
    result is bit-identical for any worker count.
    """
    workers = resolve_workers(workers)
    g = config.grid
    rec = np.array([g.step_of(t) for t in config.times], dtype=np.int64)
    windows = config.window_table()
    probe_cells = np.array([g.cell_of(x) for x in config.probes], dtype=np.int64)
    streams = config.first_stream + np.arange(config.replicas, dtype=np.int64)
    _JOB.clear()
    _JOB.update(grid=g, model=config.model, seed=int(config.seed), rec=rec, probes=probe_cells,
                windows=windows, powers=int(config.powers))
    chunks = [c for c in np.array_split(streams, min(workers, streams.size)) if c.size]
    try:
        if len(chunks) == 1:
            parts = [_march_chunk(chunks[0])]
        else:
            with ProcessPoolExecutor(len(chunks), mp_context=get_context("fork")) as ex:
                parts = list(ex.map(_march_chunk, chunks))
    finally:
        _JOB.clear()
    arr = EnsembleArrays(*(np.concatenate([getattr(p, k) for p in parts]) for k in
                           ("probes", "deviations", "power_sums", "negatives")))
    return _summarize(config, windows, arr)


def _summarize(config: EnsembleConfig, windows: np.ndarray, arr: EnsembleArrays) -> EnsembleResult:
    n = config.replicas
    averages = 1.0 + arr.deviations / (2.0 * windows[None, :, :]) if windows.size else arr.deviations.copy()
    power_means = arr.power_sums / config.grid.ncells
    rows = []

    def add(t, stat, loc, order, est, se):
        rows.append({"t": float(t), "statistic": stat, "location": None if loc is None else float(loc),
                     "order": None if order is None else float(order), "estimate": float(est),
                     "se": float(se), "n": int(n)})

    if "mean" in config.statistics:
        m, s = _pairwise_mean(arr.probes), _se(arr.probes)
        for k, t in enumerate(config.times):
            for p, x in enumerate(config.probes):
                add(t, "mean", x, None, m[k, p], s[k, p])
    if "moments" in config.statistics:
        for order in config.moments:
            v = np.abs(arr.probes) ** order
            m, s = _pairwise_mean(v), _se(v)
            for k, t in enumerate(config.times):
                for p, x in enumerate(config.probes):
                    add(t, "moment", x, order, m[k, p], s[k, p])
    if "window" in config.statistics:
        m, s = _pairwise_mean(averages), _se(averages)
        for k, t in enumerate(config.times):
            for f in range(windows.shape[1]):
                add(t, "window", windows[k, f], None, m[k, f], s[k, f])
    f_values = f_var = None
    double = False
    if "f" in config.statistics:
        xi = xi_for(config.model)
        f_values = np.empty_like(arr.deviations)
        f_var = np.empty(windows.shape)
        for k, t in enumerate(config.times):
            for f in range(windows.shape[1]):
                L = float(windows[k, f])
                var = None if config.variance_source == "mc-cross-replica" else gaussian_window_variance(t, L, xi)
                # deviations integrate u - 1, whose mean is zero
                fs = f_statistic(arr.deviations[:, k, f], var, L, mean=0.0)
                f_values[:, k, f] = fs.values
                f_var[k, f] = fs.variance
                double = double or fs.double_use
        m, s = _pairwise_mean(f_values), _se(f_values)
        for k, t in enumerate(config.times):
            for f in range(windows.shape[1]):
                add(t, "f", windows[k, f], None, m[k, f], s[k, f])
    if config.powers:
        m, s = _pairwise_mean(power_means), _se(power_means)
        for k, t in enumerate(config.times):
            for q in range(config.powers):
                add(t, "spatial-moment", None, q + 1, m[k, q], s[k, q])
    return EnsembleResult(config, windows, arr.probes, arr.deviations, averages, power_means, arr.negatives,
                          f_values, f_var, double, rows)


def time_paths(grid: GridSpec, model: ModelSpec, seed: int, streams, t0: float, t1: float, probes=(0.0,)):
    """Values ``u(t, x)`` at every lattice time in ``[t0, t1]``.

    Returns
    -------
    times : ndarray, shape (K,)
    paths : ndarray, shape (len(streams) * len(probes), K)
    """
    a, b = grid.step_of(t0), grid.step_of(t1)
    rec = np.arange(a, b + 1)
    cells = [grid.cell_of(x) for x in probes]
    arr = march_ensemble(grid, model, seed, streams, rec, probes=cells)
    paths = np.moveaxis(arr.probes, 2, 1).reshape(-1, rec.size)
    return rec * grid.dt, paths


# --------------------------------------------------------------------------
# diagnostics


def weakly_decreasing(values, se, z: float = 1.96) -> bool:
    """True when no step up exceeds ``z`` combined standard errors."""
    v = np.asarray(values, dtype=float)
    s = np.asarray(se, dtype=float)
    return bool(np.all(v[1:] <= v[:-1] + z * np.hypot(s[1:], s[:-1])))


@dataclass
class TestReport:
    """Outcome of one limit diagnostic.

    ``metric`` and ``se`` are indexed like ``times``/``lengths``;
    ``path_metric`` holds per-path values for the pathwise diagnostic.
    ``passed`` is None when the run lies outside the regime where a verdict
    is expected.
    """

    __test__ = False  # not a pytest class

    kind: str
    criterion: str
    times: tuple
    lengths: tuple
    metric: tuple
    se: tuple
    n: tuple
    params: dict
    thresholds: dict
    in_regime: bool | None
    trend_ok: bool | None
    final_ok: bool | None
    passed: bool | None
    path_metric: tuple = ()
    notes: tuple = ()

    def to_csv(self, path=None) -> str:
        """Columns ``kind,row,index,t,L,value,se,n``; the verdict is a function of these rows."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "row", "index", "t", "L", "value", "se", "n"])
        for i, (t, L, m, s, n) in enumerate(zip(self.times, self.lengths, self.metric, self.se, self.n)):
            w.writerow([self.kind, "metric", i, _fmt(t), _fmt(L), _fmt(m), _fmt(s), n])
        for i, v in enumerate(self.path_metric):
            w.writerow([self.kind, "path", i, "", "", _fmt(v), "", ""])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "criterion": self.criterion,
            "times": list(self.times),
            "lengths": list(self.lengths),
            "metric": list(self.metric),
            "se": list(self.se),
            "n": list(self.n),
            "params": self.params,
            "thresholds": self.thresholds,
            "in_regime": self.in_regime,
            "trend_ok": self.trend_ok,
            "final_ok": self.final_ok,
            "passed": self.passed,
            "path_metric": list(self.path_metric),
            "notes": list(self.notes),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def _records(results):
    """Flatten results into ``(t, L, replica samples...)`` records sorted by (t, L)."""
    if isinstance(results, EnsembleResult):
        results = [results]
    results = list(results)
    if not results:
        raise UsageError("no ensemble results given")
    recs = []
    for res in results:
        for k, t in enumerate(res.times):
            for f in range(res.lengths.shape[1]):
                recs.append((t, float(res.lengths[k, f]), res, k, f))
    recs.sort(key=lambda r: (r[0], r[1]))
    return recs


def _regime(kind, lam, th: ThresholdReport | None):
    if th is None or lam is None:
        return None, {}
    if kind == "wlln":
        return lam > th.lambda1, {"lambda1": th.lambda1}
    if kind == "slln":
        return lam > th.lambda2, {"lambda2": th.lambda2}
    if kind == "clt":
        return lam > th.lambda3, {"lambda3": th.lambda3}
    if kind == "clt-fail":
        return lam < th.lambda4, {"lambda4": th.lambda4}
    return None, {}


def _bootstrap_median_se(x: np.ndarray, n_boot: int = 1000, seed: int = 0) -> float:
    gen = np.random.default_rng(seed)
    idx = gen.integers(0, x.size, size=(n_boot, x.size))
    return float(np.median(x[idx], axis=1).std(ddof=1))


def _variance_se(x: np.ndarray) -> float:
    n = x.size
    d = x - x.mean()
    s2 = float(np.sum(d * d) / (n - 1))
    m4 = float(np.mean(d**4))
    return math.sqrt(max(m4 - s2 * s2 * (n - 3) / (n - 1), 0.0) / n)


def _default_thresholds(model: ModelSpec) -> ThresholdReport | None:
    if model.kind in ("pam", "scaled-pam"):
        return compute_thresholds(GammaCurve.pam(model.kappa), model.lip)
    return None


def limit_diagnostics(results, kind: str, thresholds: ThresholdReport | None = None, *, eps: float = 0.1,
                      delta: float = 0.1, tail_start: float | None = None, min_fraction: float = 0.95,
                      final_bound: float | None = None, band=(0.9, 1.1), z: float = 1.96) -> TestReport:
    """Per-time metrics of a limit diagnostic and their trend verdict.

    Kinds and metrics:

    * ``wlln``: ``P(|X_t - 1| >= eps)``; weakly decreasing and below
      ``final_bound`` (default 0.05) at the last time.
    * ``slln``: per path, the running sup of ``|X_t - 1|`` over times
      ``>= tail_start``; passes when at least ``min_fraction`` of paths stay
      below ``delta``.
    * ``clt``: KS distance of F to N(0, 1); weakly decreasing and below
      ``final_bound`` (default 0.1) at the last time.
    * ``clt-fail``: median ``|F|``; weakly decreasing.
    * ``variance-ratio``: sample variance of the window integral over
      ``2L int_0^t xi``; ``|ratio - 1|`` weakly decreasing and the last ratio
      inside ``band``.

    Trends allow an increase of up to ``z`` combined standard errors between
    neighbouring points. For the first four kinds a verdict is only attached
    when the growth rate lies in the regime of the corresponding threshold.

    Raises
    ------
    UsageError
        Unknown kind, fewer than 3 schedule points, or missing statistics.
    """
    if kind not in DIAGNOSTICS or kind == "holder":
        raise UsageError(f"unknown diagnostic {kind!r}; holder reports come from holder_exponent")
    recs = _records(results)
    if len(recs) < 3:
        raise UsageError(f"{kind} needs a schedule of at least 3 points, got {len(recs)}")
    cfg = recs[0][2].config
    lam = cfg.lam
    if thresholds is None:
        thresholds = _default_thresholds(cfg.model)
    in_regime, used = _regime(kind, lam, thresholds)
    used = {"lambda": lam, **used}
    if kind in ("clt", "clt-fail") and any(r[2].f_values is None for r in recs):
        raise UsageError(f"{kind} needs the f statistic")
    if kind in ("wlln", "slln") and any("window" not in r[2].config.statistics for r in recs):
        raise UsageError(f"{kind} needs the window statistic")

    times = tuple(r[0] for r in recs)
    lengths = tuple(r[1] for r in recs)
    metric, se, ns, paths, notes = [], [], [], (), []
    params: dict = {"z": z}
    if kind == "wlln":
        fb = 0.05 if final_bound is None else final_bound
        params.update(eps=eps, final_bound=fb)
        for t, L, res, k, f in recs:
            x = res.averages[:, k, f]
            p = float(np.mean(np.abs(x - 1.0) >= eps))
            metric.append(p)
            se.append(math.sqrt(p * (1 - p) / x.size))
            ns.append(x.size)
        trend = weakly_decreasing(metric, se, z)
        final = metric[-1] < fb
    elif kind == "clt":
        fb = 0.1 if final_bound is None else final_bound
        params.update(final_bound=fb, se_rule="0.2605/sqrt(n)")
        for t, L, res, k, f in recs:
            d, _ = ks_normal(res.f_values[:, k, f])
            metric.append(d)
            se.append(_KS_SD / math.sqrt(res.replicas))
            ns.append(res.replicas)
        trend = weakly_decreasing(metric, se, z)
        final = metric[-1] < fb
    elif kind == "clt-fail":
        params.update(se_rule="bootstrap-1000")
        for t, L, res, k, f in recs:
            a = np.abs(res.f_values[:, k, f])
            metric.append(float(np.median(a)))
            se.append(_bootstrap_median_se(a))
            ns.append(a.size)
        trend = weakly_decreasing(metric, se, z)
        final = None
    elif kind == "slln":
        t0 = times[0] if tail_start is None else tail_start
        params.update(delta=delta, tail_start=t0, min_fraction=min_fraction)
        n0 = recs[0][2].replicas
        sup = np.zeros(n0)
        tail = 0
        for t, L, res, k, f in recs:
            x = np.abs(res.averages[:, k, f] - 1.0)
            if x.size != n0:
                raise UsageError("slln needs the same paths at every time")
            metric.append(float(np.max(x)))
            se.append(0.0)
            ns.append(x.size)
            if t >= t0 - 1e-12:
                sup = np.maximum(sup, x)
                tail += 1
        if tail == 0:
            raise UsageError(f"no schedule time at or beyond tail_start={t0}")
        paths = tuple(float(v) for v in sup)
        frac = float(np.mean(sup < delta))
        params["fraction_below"] = frac
        trend = None
        final = frac >= min_fraction
        notes.append(f"{int(np.sum(sup < delta))}/{n0} paths stay below {delta} over {tail} tail times")
    else:  # variance-ratio
        lo, hi = band
        params.update(band=[lo, hi])
        for t, L, res, k, f in recs:
            xi = xi_for(res.config.model)
            if xi is None:
                raise UsageError("variance-ratio needs a model with an exact xi curve")
            ixi = integrate.quad(lambda r: float(xi(r)), 0.0, t, epsabs=0, epsrel=1e-10)[0]
            x = res.deviations[:, k, f]
            den = 2.0 * L * ixi
            metric.append(float(np.var(x, ddof=1) / den))
            se.append(_variance_se(x) / den)
            ns.append(x.size)
        dev = np.abs(np.array(metric) - 1.0)
        trend = weakly_decreasing(dev, se, z)
        final = bool(lo <= metric[-1] <= hi)
        in_regime = True

    if kind in ("wlln", "clt", "clt-fail", "slln") and in_regime is False:
        passed = None
        notes.append("growth rate outside the regime of the threshold; no verdict expected")
    elif kind in ("wlln", "clt", "clt-fail") and in_regime is None:
        passed = None
        notes.append("no threshold available for this model; no verdict expected")
    else:
        parts = [v for v in (trend, final) if v is not None]
        passed = bool(all(parts))
    crit = {
        "wlln": f"P(|X_t-1|>={eps}) weakly decreasing and < {params.get('final_bound')} at the last time",
        "slln": f"running sup of |X_t-1| beyond t={params.get('tail_start')} below {delta} "
                f"for >= {min_fraction:.0%} of paths",
        "clt": f"KS distance of F weakly decreasing and < {params.get('final_bound')} at the last time",
        "clt-fail": "median |F| weakly decreasing",
        "variance-ratio": f"|ratio-1| weakly decreasing and last ratio in [{band[0]}, {band[1]}]",
    }[kind]
    return TestReport(kind, crit, times, lengths, tuple(metric), tuple(se), tuple(ns), params, used, in_regime,
                      trend, final, passed, paths, tuple(notes))


# --------------------------------------------------------------------------
# time regularity


@dataclass(frozen=True)
class HolderEstimate:
    """Fitted time-Holder exponent: half the log-log slope of the mean squared increment."""

    exponent: float
    ci_lo: float
    ci_hi: float
    lags: tuple
    msd: tuple
    n_paths: int

    def report(self, bounds=(0.20, 0.30)) -> TestReport:
        lo, hi = bounds
        ok = bool(lo <= self.exponent <= hi)
        return TestReport("holder", f"exponent in [{lo}, {hi}]", tuple(self.lags), tuple(np.nan for _ in self.lags),
                          tuple(self.msd), tuple(0.0 for _ in self.lags), tuple(self.n_paths for _ in self.lags),
                          {"bounds": [lo, hi], "exponent": self.exponent, "ci": [self.ci_lo, self.ci_hi]},
                          {}, True, None, ok, ok)


def holder_exponent(path, dt: float, lag_range=None, n_lags: int = 16, level: float = 0.95) -> HolderEstimate:
    """Regress ``log E|u(t+h) - u(t)|**2`` on ``log h`` and halve the slope.

    Parameters
    ----------
    path : array_like, shape (K,) or (paths, K)
        Values on a uniform time grid with spacing ``dt``.
    lag_range : (float, float), optional
        Lags used in the fit, inside ``[2 dt, T / 10]`` where
        ``T = (K - 1) dt``; defaults to that whole interval.
    n_lags : int
        Number of (log-spaced, integer-step) lags.

    Raises
    ------
    DataError
        Fewer than 100 samples, a constant path, or a lag range outside the
        admissible interval.
    """
    u = np.atleast_2d(np.asarray(path, dtype=float))
    K = u.shape[1]
    if K < 100:
        raise DataError(f"need at least 100 time samples, got {K}")
    if not np.all(np.isfinite(u)):
        raise DataError("path contains non-finite values")
    T = (K - 1) * dt
    h0, h1 = (2 * dt, T / 10) if lag_range is None else lag_range
    if h0 < 2 * dt * (1 - 1e-9) or h1 > T / 10 * (1 + 1e-9) or h1 <= h0:
        raise DataError(f"lag range must lie within [2dt, T/10] = [{2 * dt:.4g}, {T / 10:.4g}]")
    k0, k1 = math.ceil(h0 / dt - 1e-9), math.floor(h1 / dt + 1e-9)
    ks = np.unique(np.round(np.geomspace(k0, k1, n_lags)).astype(int))
    if ks.size < 3:
        raise DataError("lag range holds fewer than 3 distinct lags")
    msd = np.array([np.mean((u[:, k:] - u[:, :-k]) ** 2) for k in ks])
    if np.any(msd <= 0):
        raise DataError("degenerate (constant) path")
    x = np.log(ks * dt)
    y = np.log(msd)
    fit = stats.linregress(x, y)
    tq = stats.t.ppf(0.5 + level / 2, ks.size - 2)
    return HolderEstimate(float(fit.slope / 2), float((fit.slope - tq * fit.stderr) / 2),
                          float((fit.slope + tq * fit.stderr) / 2),
                          tuple(float(v) for v in ks * dt), tuple(float(v) for v in msd), u.shape[0])
