import numpy as np
import pytest
from scipy import stats

from shelab.errors import ConfigurationError, UsageError
from shelab.localization import (CouplingError, LocalizationSpec, SeparationRule, coupling_error, dependence_cone,
                                 localize, write_coupling_csv)
from shelab.solver import GridSpec, ModelSpec, NoiseField, generate_noise, solve_fd, solve_mild


@pytest.fixture(scope="module")
def grid():
    return GridSpec.standard(0.1, 0.2, 3.0)


def test_spec_validation():
    with pytest.raises(ConfigurationError):
        LocalizationSpec(0.0)
    with pytest.raises(ConfigurationError):
        LocalizationSpec(1.0, depth=-1)
    with pytest.raises(ConfigurationError):
        LocalizationSpec(1.0, depth=1.5)
    spec = LocalizationSpec(0.5, 3)
    assert spec.radius(2.0) == pytest.approx(1.0)
    assert spec.independence_distance(2.0) == pytest.approx(6.0)


def test_separation_rule():
    rule = SeparationRule(1.0, 2, 0.5)
    assert rule.separation == pytest.approx(2.0)
    assert rule.admits([0.0, 2.5, 5.0])
    assert not rule.admits([0.0, 1.0])
    with pytest.raises(ConfigurationError):
        SeparationRule(1.0, 1, 0.5)


def test_depth_zero_is_one(grid):
    sol = localize(generate_noise(grid, 0), ModelSpec.pam(), grid, LocalizationSpec(1.0, 0))
    assert np.all(sol.values == 1.0)
    assert sol.localization == (1.0, 0)


def test_unresolved_window_rejected(grid):
    with pytest.raises(ConfigurationError, match="two cells"):
        localize(generate_noise(grid, 0), ModelSpec.pam(), grid, LocalizationSpec(0.01, 2))


def test_huge_window_equals_full_mild(grid):
    noise = generate_noise(grid, 4)
    loc = localize(noise, ModelSpec.pam(), grid, LocalizationSpec(1e6, 3))
    full = solve_mild(grid, ModelSpec.pam(), noise, depth=3)
    assert np.array_equal(loc.values, full.values)


def test_depth_one_cone(grid):
    spec = LocalizationSpec(0.5, 1)
    cone = dependence_cone(spec, grid, 0.2, 0.0)
    r = int(np.floor(spec.radius(0.2) / grid.dx + 1e-9))
    assert cone.half_widths.max() == r
    assert np.all(cone.half_widths <= r)
    assert not cone.contains(grid.nsteps - 1, grid.origin + r + 1)


def test_cones_nested_and_disjoint(grid):
    c = 0.5
    small = dependence_cone(LocalizationSpec(c, 2), grid, 0.2, 0.0)
    big = dependence_cone(LocalizationSpec(c, 3), grid, 0.2, 0.0)
    assert small.issubset(big)
    d = LocalizationSpec(c, 2).independence_distance(0.2)
    other = dependence_cone(LocalizationSpec(c, 2), grid, 0.2, round((d + 0.2) / grid.dx) * grid.dx)
    assert small.isdisjoint(other)
    # contained in the slab of n window radii
    j = small.cells()[:, 1]
    dist = np.abs(j - grid.origin) * grid.dx
    assert dist.max() <= 2 * LocalizationSpec(c, 2).radius(0.2) + 1e-12


def test_out_of_cone_perturbation_is_invisible(grid):
    spec = LocalizationSpec(0.5, 2)
    noise = generate_noise(grid, 13)
    base = localize(noise, ModelSpec.pam(), grid, spec).value(0.2, 0.0)
    mask = dependence_cone(spec, grid, 0.2, 0.0).mask()
    outside = np.argwhere(~mask)
    gen = np.random.default_rng(0)
    for m, j in outside[gen.choice(len(outside), 10, replace=False)]:
        pert = noise.with_overrides({(int(m), int(j)): 8.0})
        assert localize(pert, ModelSpec.pam(), grid, spec).value(0.2, 0.0) == base
    inside = np.argwhere(mask)
    m, j = inside[len(inside) // 2]
    pert = noise.with_overrides({(int(m), int(j)): 8.0})
    assert localize(pert, ModelSpec.pam(), grid, spec).value(0.2, 0.0) != base


def test_localized_field_is_stationary_in_space():
    g = GridSpec.standard(0.1, 0.2, 3.0)
    spec = LocalizationSpec(0.5, 2)
    a, b = [], []
    for s in range(300):
        sol = localize(NoiseField(g, 1, s), ModelSpec.pam(), g, spec)
        a.append(sol.value(0.2, -1.5))
        b.append(sol.value(0.2, 1.5))
    assert stats.ks_2samp(a, b).pvalue > 0.01


def _ensemble(grid, c, depth, n):
    full, loc = [], []
    for s in range(n):
        noise = NoiseField(grid, 2, s)
        full.append(solve_fd(grid, ModelSpec.pam(), noise))
        loc.append(localize(noise, ModelSpec.pam(), grid, LocalizationSpec(c, depth), kernel="lattice"))
    return full, loc


def test_coupling_error_full_window_is_picard_residual(grid):
    full, loc = _ensemble(grid, 1e6, 12, 5)
    err = coupling_error(full, loc, 2.0, [0.0, 1.0])
    assert err.error < 1e-10
    assert err.ci_lo <= err.error <= err.ci_hi + 1e-30


def test_coupling_error_decreases_with_depth(grid):
    errs = []
    for depth in (1, 3, 6):
        full, loc = _ensemble(grid, 1e6, depth, 10)
        errs.append(coupling_error(full, loc, 2.0, [0.0]).error)
    assert errs[0] > errs[1] > errs[2]


def test_coupling_error_validation(grid, tmp_path):
    full, loc = _ensemble(grid, 0.5, 2, 3)
    with pytest.raises(UsageError):
        coupling_error(full, loc[:2], 2.0, [0.0])
    with pytest.raises(UsageError):
        coupling_error(full, full, 2.0, [0.0])
    with pytest.raises(UsageError):
        coupling_error(full, loc[::-1], 2.0, [0.0])
    other = [solve_fd(grid, ModelSpec.scaled_pam(2.0), NoiseField(grid, 2, s)) for s in range(3)]
    with pytest.raises(UsageError):
        coupling_error(other, loc, 2.0, [0.0])
    err = coupling_error(full, loc, 2.0, [0.0, 0.5])
    assert isinstance(err, CouplingError)
    path = write_coupling_csv([err], tmp_path / "c.csv")
    lines = path.read_text().splitlines()
    assert lines[0] == "c,depth,t,p,error,ci_lo,ci_hi"
    assert float(lines[1].split(",")[4]) == err.error
