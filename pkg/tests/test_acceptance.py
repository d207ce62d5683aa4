"""End-to-end acceptance checks.

Each test carries ``acceptance(key, label)``; the end-of-run summary prints one
PASS/FAIL line per key. Heavy ensembles honour ``SHELAB_WORKERS``.
"""

import json
import math
import time
from fractions import Fraction

import numpy as np
import pytest
from scipy import integrate

from shelab.cli import main
from shelab.exponents import GammaCurve, thresholds
from shelab.harness import (EnsembleConfig, holder_exponent, ks_normal, limit_diagnostics, run_ensemble,
                            time_paths)
from shelab.kernel import XiCurve, gaussian_window_variance, heat_kernel, pair_covariance
from shelab.localization import LocalizationSpec, coupling_error, dependence_cone, localize
from shelab.solver import GridSpec, ModelSpec, NoiseField, generate_noise, solve_fd
from shelab.windows import build_partition, refine_partition

PAM = ModelSpec.pam()
SECOND_MOMENT_T1 = 1.9524


def _fmt(xs):
    return "[" + ", ".join(f"{x:.4g}" for x in xs) + "]"


# ---------------------------------------------------------------- kernel


@pytest.mark.acceptance("01", "heat kernel semigroup and normalization")
def test_heat_kernel_identities(verdict):
    t0 = time.perf_counter()
    semi = 0.0
    for s in (0.1, 1.0, 2.0):
        for t in (0.1, 0.5, 2.0):
            for x in (-3.0, -0.5, 0.0, 1.0, 2.5):
                conv = integrate.quad(lambda y: heat_kernel(s, x - y) * heat_kernel(t, y), -np.inf, np.inf,
                                      epsabs=1e-13, epsrel=1e-12)[0]
                semi = max(semi, abs(conv - heat_kernel(s + t, x)))
    norm = max(abs(integrate.quad(lambda y: heat_kernel(t, y), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)[0] - 1)
               for t in (0.01, 0.1, 1.0, 10.0, 100.0))
    elapsed = time.perf_counter() - t0
    ok = semi < 1e-8 and norm < 1e-10 and elapsed < 1.0
    verdict(ok, f"semigroup err {semi:.1e}, normalization err {norm:.1e}, {elapsed:.2f}s")
    assert ok


# ---------------------------------------------------------------- moments


@pytest.fixture(scope="module")
def probe_ensemble():
    grid = GridSpec.standard(0.02, 1.0, 8.0)
    cfg = EnsembleConfig(grid, PAM, (1.0,), 10_000, seed=2, probes=(0.0, 0.2, 0.5, 1.0, 2.0), moments=(2.0,),
                         statistics=("mean", "moments"))
    return run_ensemble(cfg)


@pytest.mark.acceptance("02", "PAM second moment at t=1 within 5% of the oracle")
def test_second_moment(probe_ensemble, verdict):
    row = [r for r in probe_ensemble.table("moment") if r["location"] == 0.0][0]
    rel = abs(row["estimate"] / SECOND_MOMENT_T1 - 1)
    ok = rel < 0.05
    verdict(ok, f"E u(1,0)^2 = {row['estimate']:.4f} +- {row['se']:.4f} vs {SECOND_MOMENT_T1} (rel {rel:.2%})")
    assert ok


@pytest.mark.acceptance("03", "two-point covariance within 3 combined SE")
def test_two_point_covariance(probe_ensemble, verdict):
    u = probe_ensemble.probe_values[:, 0, :]
    xs = probe_ensemble.config.probes
    n = u.shape[0]
    d = u - u.mean(axis=0)
    zs = []
    for p, x in enumerate(xs):
        prod = d[:, 0] * d[:, p]
        est = prod.sum() / (n - 1)
        se = prod.std(ddof=1) / math.sqrt(n)
        oracle = pair_covariance(1.0, x, XiCurve.pam())
        zs.append(abs(est - oracle) / math.sqrt(se**2 + (1e-8 * oracle) ** 2))
    ok = max(zs) <= 3.0
    verdict(ok, f"|z| per separation {_fmt(zs)}")
    assert ok


# ---------------------------------------------------------------- windows and F


@pytest.mark.acceptance("04", "window variance ratio tends to 1 (L = 5, 20, 50)")
def test_variance_ratio(verdict):
    grid = GridSpec.padded(0.05, 1.0, 50.0)
    cfg = EnsembleConfig(grid, PAM, (1.0,), 2000, seed=4, half_lengths=(5.0, 20.0, 50.0),
                         statistics=("window", "f"))
    res = run_ensemble(cfg)
    rep = limit_diagnostics(res, "variance-ratio")
    f50 = res.f_values[:, 0, 2]
    f_var = float(np.var(f50, ddof=1))
    f_mean_z = abs(f50.mean()) / (f50.std(ddof=1) / math.sqrt(f50.size))
    ok = bool(rep.passed) and abs(f_var - 1) <= 0.1 and f_mean_z <= 3
    verdict(ok, f"ratios {_fmt(rep.metric)} (se {_fmt(rep.se)}), Var F(L=50) {f_var:.3f}, "
                f"|mean F|/SE {f_mean_z:.2f}")
    assert ok


@pytest.mark.acceptance("05", "Gaussian field: window variance within 3% and KS at 1% for t = 0.5, 1, 2")
def test_gaussian_field(verdict):
    L = 5.0
    grid = GridSpec.padded(0.1, 2.0, L)
    cfg = EnsembleConfig(grid, ModelSpec.constant(1.0), (0.5, 1.0, 2.0), 20_000, seed=5, half_lengths=(L,),
                         statistics=("window", "f"))
    res = run_ensemble(cfg)
    rel, pvals = [], []
    for k, t in enumerate(cfg.times):
        oracle = gaussian_window_variance(t, L, XiCurve.constant())
        rel.append(abs(np.var(res.deviations[:, k, 0], ddof=1) / oracle - 1))
        pvals.append(ks_normal(res.f_values[:2000, k, 0])[1])
    ok = max(rel) <= 0.03 and min(pvals) > 0.01
    verdict(ok, f"variance rel err {_fmt(rel)} (20000 replicas), KS p {_fmt(pvals)} (2000 replicas, 3 tests)")
    assert ok


# ---------------------------------------------------------------- thresholds


@pytest.mark.acceptance("06", "threshold calculator values and ordering")
def test_thresholds(verdict):
    rep = thresholds(GammaCurve.pam(), 1.0)
    exact = (abs(rep.lambda1 - 1 / 12) <= 1e-5 and rep.lambda2 == 25 / 12 and abs(rep.lambda3 - 2 / 3) <= 1e-5
             and abs(rep.lambda4 - 2 / 3) <= 1e-5 and rep.lambda5 == 514.0 and rep.lambda5 == rep.lambda5_alt)
    gen = np.random.default_rng(6)
    bad = 0
    for _ in range(100):
        a, b, c, e = gen.uniform(0, 2, 4)
        r = gen.uniform(0.1, 1.5)

        def g(p, a=a, b=b, c=c, e=e, r=r):
            q = p - 1.0
            return a * q + b * q * q + c * (p**3 - p) + e * math.expm1(r * q)

        curve = GammaCurve.analytic(g)
        assert curve.is_convex(np.linspace(1, 4, 31))
        th = thresholds(curve, 1.0)
        bad += th.lambda4 > th.lambda3
    ok = exact and bad == 0
    verdict(ok, f"lambda = ({rep.lambda1:.7g}, {rep.lambda2:.7g}, {rep.lambda3:.8g}, {rep.lambda4:.8g}, "
                f"{rep.lambda5:g}), alt {rep.lambda5_alt:g}, ordering violations {bad}/100")
    assert ok


# ---------------------------------------------------------------- localization


@pytest.mark.acceptance("07", "dependence cone exactness and independence beyond 2n sqrt(ct)")
def test_dependence_cone(verdict):
    grid = GridSpec.standard(0.1, 0.5, 4.0)
    spec = LocalizationSpec(0.5, 2)
    T = grid.horizon
    noise = generate_noise(grid, 7)
    base = localize(noise, PAM, grid, spec)
    gen = np.random.default_rng(7)
    same = changed = 0
    for trial in range(110):
        x = grid.x[gen.integers(grid.cell_of(-2.0), grid.cell_of(2.0) + 1)]
        mask = dependence_cone(spec, grid, T, x).mask()
        cells = np.argwhere(~mask if trial < 100 else mask)
        m, j = cells[gen.integers(len(cells))]
        pert = noise.with_overrides({(int(m), int(j)): float(gen.choice([-1, 1]) * gen.uniform(3, 6))})
        v = localize(pert, PAM, grid, spec).value(T, x)
        if trial < 100:
            same += v == base.value(T, x)
        else:
            changed += v != base.value(T, x)
    x1, x2 = -1.5, 1.5
    assert x2 - x1 > spec.independence_distance(T)
    assert dependence_cone(spec, grid, T, x1).isdisjoint(dependence_cone(spec, grid, T, x2))
    n = 5000
    a, b = np.empty(n), np.empty(n)
    for s in range(n):
        sol = localize(NoiseField(grid, 70, s), PAM, grid, spec)
        a[s], b[s] = sol.value(T, x1), sol.value(T, x2)
    r = float(np.corrcoef(a, b)[0, 1])
    ok = same == 100 and changed >= 1 and abs(r) <= 4 / math.sqrt(n)
    verdict(ok, f"out-of-cone unchanged {same}/100, in-cone changed {changed}/10, "
                f"corr {r:+.4f} (band {4 / math.sqrt(n):.4f})")
    assert ok


@pytest.mark.acceptance("08", "coupling error weakly decreasing in c")
def test_coupling_trend(verdict):
    grid = GridSpec.standard(0.1, 0.5, 4.0)
    noises = [NoiseField(grid, 8, s) for s in range(100)]
    full = [solve_fd(grid, PAM, nz) for nz in noises]
    reps = []
    for c in (0.25, 0.5, 1.0, 2.0):
        loc = [localize(nz, PAM, grid, LocalizationSpec(c, 8), kernel="lattice") for nz in noises]
        reps.append(coupling_error(full, loc, 2.0, (0.0, 1.0)))
    ok = all(b.error <= a.ci_hi for a, b in zip(reps, reps[1:]))
    verdict(ok, "errors " + ", ".join(f"c={r.c:g}: {r.error:.4g} [{r.ci_lo:.3g}, {r.ci_hi:.3g}]" for r in reps))
    assert ok


# ---------------------------------------------------------------- limit diagnostics


@pytest.mark.acceptance("09", "WLLN exceedance trend (lambda=1, t = 2..8)")
def test_wlln_trend(verdict):
    grid = EnsembleConfig.preset_grid("coarse", 8.0, math.exp(8.0))
    cfg = EnsembleConfig(grid, PAM, (2.0, 4.0, 6.0, 8.0), 500, seed=9, lam=1.0, statistics=("window",))
    rep = limit_diagnostics(run_ensemble(cfg), "wlln", eps=0.1)
    verdict(bool(rep.passed), f"P(|X-1|>=0.1) {_fmt(rep.metric)} (se {_fmt(rep.se)}), trend {rep.trend_ok}, "
                              f"final<0.05 {rep.final_ok}")
    assert rep.passed


@pytest.mark.acceptance("10", "CLT: KS distance trend (lambda=1.5, t = 4, 6, 8)")
def test_clt_trend(verdict):
    grid = EnsembleConfig.preset_grid("desk", 8.0, math.exp(12.0))
    cfg = EnsembleConfig(grid, PAM, (4.0, 6.0, 8.0), 2000, seed=10, lam=1.5, statistics=("window", "f"))
    rep = limit_diagnostics(run_ensemble(cfg), "clt")
    verdict(bool(rep.passed), f"KS {_fmt(rep.metric)} (se {_fmt(rep.se)}), trend {rep.trend_ok}, "
                              f"final<0.1 {rep.final_ok}")
    assert rep.passed


@pytest.mark.acceptance("11", "CLT failure: median |F| trend (lambda=0.2, t = 4, 6, 8)")
def test_clt_failure_trend(verdict):
    grid = EnsembleConfig.preset_grid("standard", 8.0, math.exp(1.6))
    cfg = EnsembleConfig(grid, PAM, (4.0, 6.0, 8.0), 2000, seed=11, lam=0.2, statistics=("window", "f"))
    rep = limit_diagnostics(run_ensemble(cfg), "clt-fail")
    verdict(bool(rep.passed), f"median |F| {_fmt(rep.metric)} (se {_fmt(rep.se)})")
    assert rep.passed


@pytest.mark.acceptance("12", "SLLN: running sup beyond t=6 below 0.1 on >= 19/20 paths (lambda=2.5)")
def test_slln_paths(verdict):
    times = (4.0, 5.0, 6.0, 6.0625, 6.125)
    grid = EnsembleConfig.preset_grid("desk", times[-1], math.exp(2.5 * times[-1]))
    cfg = EnsembleConfig(grid, PAM, times, 20, seed=12, lam=2.5, statistics=("window",))
    rep = limit_diagnostics(run_ensemble(cfg), "slln", delta=0.1, tail_start=6.0, min_fraction=0.95)
    below = sum(v < 0.1 for v in rep.path_metric)
    verdict(bool(rep.passed), f"{below}/20 paths below 0.1, worst sup {max(rep.path_metric):.4f}")
    assert rep.passed


@pytest.mark.acceptance("13", "time-Holder exponent in [0.20, 0.30]")
def test_holder_exponent(verdict):
    grid = GridSpec.standard(0.01, 1.0, 8.0)
    out = {}
    for model in (PAM, ModelSpec.constant(1.0)):
        _, paths = time_paths(grid, model, 13, np.arange(4), 0.5, 1.0, probes=(-4.0, -2.0, 0.0, 2.0, 4.0))
        out[model.name] = holder_exponent(paths, grid.dt)
    ok = all(0.20 <= e.exponent <= 0.30 for e in out.values())
    verdict(ok, ", ".join(f"{k}: {e.exponent:.4f} [{e.ci_lo:.3f}, {e.ci_hi:.3f}]" for k, e in out.items()))
    assert ok


# ---------------------------------------------------------------- partitions


def _random_feasible(gen):
    while True:
        L = Fraction(int(gen.integers(2, 20_000)), int(gen.integers(1, 13)))
        Lp = L * Fraction(int(gen.integers(1, 1000)), 1001)
        q = math.floor(2 * L / Lp)
        if 2 * L - q * Lp <= q:
            margin = Lp * Fraction(int(gen.integers(0, 500)), 1001)
            return L, Lp, margin


def _tiles(intervals, lo, hi):
    iv = sorted(intervals)
    return iv[0][0] == lo and iv[-1][1] == hi and all(a[1] == b[0] for a, b in zip(iv, iv[1:]))


def _partition_problems(L, Lp, m):
    lay = build_partition(L, Lp)
    errs = []
    if lay.q != math.floor(2 * L / Lp):
        errs.append("q")
    if sum(lay.lengths) != 2 * L or not _tiles(lay.blocks, -L, L):
        errs.append("tiling")
    if any(not Lp <= b - a <= Lp + 1 for a, b in lay.blocks):
        errs.append("block length")
    for cls in (lay.even, lay.odd):
        for i, j in zip(cls, cls[1:]):
            if lay.blocks[j - 1][0] - lay.blocks[i - 1][1] < Lp:
                errs.append("parity gap")
    ref = refine_partition(lay, margin=m)
    if any(not (a <= c and d <= b) for (a, b), (c, d) in zip(lay.blocks, ref.inner)):
        errs.append("inner containment")
    pieces = [iv for iv in list(ref.inner) + list(ref.strips) if iv[1] > iv[0]]
    total = sum(b - a for a, b in ref.inner) + sum(b - a for a, b in ref.strips)
    if total != 2 * L or not _tiles(pieces, -L, L):
        errs.append("refined tiling")
    if any(b[0] - a[1] < 2 * m for a, b in zip(ref.inner, ref.inner[1:])):
        errs.append("inner gap")
    # shrinking keeps the remainder condition, so the scaled triple stays feasible
    f = Fraction(1, 3)
    scaled = refine_partition(build_partition(f * L, f * Lp), margin=f * m)
    if [(f * a, f * b) for a, b in ref.inner] != list(scaled.inner):
        errs.append("scale equivariance")
    return errs


@pytest.mark.acceptance("14", "partition invariants on 1000 random feasible triples")
def test_partition_invariants(verdict):
    gen = np.random.default_rng(14)
    failures = []
    for _ in range(1000):
        L, Lp, m = _random_feasible(gen)
        errs = _partition_problems(L, Lp, m)
        if errs:
            failures.append((L, Lp, m, errs))
    ok = not failures
    verdict(ok, f"{1000 - len(failures)}/1000 triples clean" + (f", first failure {failures[0]}" if failures else ""))
    assert ok


# ---------------------------------------------------------------- determinism

_SMALL = ["--set", "dx=0.1"]
_DETERMINISM_RUNS = {
    "simulate": ["--set", "horizon=0.1", "--set", "half_width=3", *_SMALL],
    "variance-check": ["--replicas", "64", "--set", "half_lengths=1,2,3", *_SMALL],
    "lyapunov": ["--replicas", "32", "--set", "times=0.25,0.5,0.75,1", "--set", "fit_lo=0.25", "--set", "fit_hi=1",
                 "--set", "half_width=8", *_SMALL],
    "wlln": ["--replicas", "64", "--set", "lam=0.5", "--set", "times=0.5,0.75,1", *_SMALL],
    "slln": ["--replicas", "16", "--set", "lam=0.5", "--set", "times=0.5,0.75,1", "--set", "tail_start=0.75",
             *_SMALL],
    "clt": ["--replicas", "64", "--set", "lam=0.8", "--set", "times=0.5,0.75,1", *_SMALL],
    "clt-fail": ["--replicas", "64", "--set", "times=0.5,0.75,1", *_SMALL],
    "localize": ["--replicas", "3", "--set", "horizon=0.2", "--set", "half_width=3", "--set", "depth=2",
                 "--set", "c=0.5,1", *_SMALL],
    "partition": ["--set", "L=100", "--set", "L_block=20", "--set", "margin=2"],
    "thresholds": [],
}


@pytest.mark.acceptance("15", "byte-identical artifacts under 1, 4 and 16 workers")
def test_determinism_across_workers(tmp_path, verdict):
    mismatched = []
    codes = {}
    for cmd, extra in _DETERMINISM_RUNS.items():
        digests = []
        for w in (1, 4, 16):
            out = tmp_path / f"{cmd}-{w}"
            seed = [] if cmd in ("partition", "thresholds") else ["--seed", "15"]
            codes[(cmd, w)] = main([cmd, *extra, *seed, "--workers", str(w), "--out", str(out)])
            man = json.loads((out / "manifest.json").read_text())
            digests.append(man["files"])
        if not (digests[0] == digests[1] == digests[2]) or not digests[0]:
            mismatched.append(cmd)
    crashed = sorted({c for (c, _), code in codes.items() if code == 1})
    ok = not mismatched and not crashed
    verdict(ok, f"{len(_DETERMINISM_RUNS) - len(mismatched)}/{len(_DETERMINISM_RUNS)} commands identical"
                + (f", differing {mismatched}" if mismatched else "") + (f", crashed {crashed}" if crashed else ""))
    assert ok
