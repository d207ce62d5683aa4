import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from shelab.errors import DomainError, QuadratureError
from shelab.kernel import (QuadratureSpec, XiCurve, gaussian_window_variance, heat_kernel, lattice_second_moment,
                           pair_covariance, pam_second_moment, renewal_volterra)


@pytest.mark.parametrize("t,x,expected", [(1, 0, 0.3989423), (1, 1, 0.2419707), (2, 0, 0.2820948)])
def test_heat_kernel_values(t, x, expected):
    assert heat_kernel(t, x) == pytest.approx(expected, abs=5e-8)


@pytest.mark.parametrize("t", [0.0, -1.0])
def test_heat_kernel_rejects_nonpositive_time(t):
    with pytest.raises(DomainError):
        heat_kernel(t, 0.0)


@given(st.floats(0.01, 50), st.floats(-20, 20))
def test_heat_kernel_is_even(t, x):
    assert heat_kernel(t, x) == heat_kernel(t, -x)


@pytest.mark.parametrize("t", [0.01, 1.0, 100.0])
def test_heat_kernel_normalization(t):
    val, _ = integrate.quad(lambda x: heat_kernel(t, x), -np.inf, np.inf, epsabs=1e-13, epsrel=1e-13)
    assert abs(val - 1.0) < 1e-10


@pytest.mark.parametrize("s", [0.1, 0.5, 1.0, 2.0])
@pytest.mark.parametrize("t", [0.1, 0.5, 1.0, 2.0])
def test_heat_kernel_semigroup(s, t):
    for x in np.linspace(-3, 3, 7):
        conv, _ = integrate.quad(lambda y: heat_kernel(s, x - y) * heat_kernel(t, y), -np.inf, np.inf,
                                 epsabs=1e-13, epsrel=1e-12)
        assert abs(conv - heat_kernel(s + t, x)) < 1e-8


@pytest.fixture(scope="module")
def volterra():
    return renewal_volterra(10.0, steps=4000)


def test_second_moment_at_zero():
    assert pam_second_moment(0.0) == 1.0


def test_second_moment_negative_time():
    with pytest.raises(DomainError):
        pam_second_moment(-0.1)


@pytest.mark.parametrize("t,expected,tol", [(1.0, 1.9524, 1e-3), (4.0, 5.0090, 3e-3)])
def test_second_moment_values(t, expected, tol):
    assert abs(pam_second_moment(t) - expected) < tol


def test_second_moment_log_slope():
    slope = (math.log(pam_second_moment(10.0)) - math.log(pam_second_moment(5.0))) / 5.0
    assert abs(slope - 0.2592) < 1e-3
    assert slope > 0.25


def test_second_moment_matches_volterra(volterra):
    times, xi = volterra
    exact = pam_second_moment(times)
    assert np.max(np.abs(exact / xi - 1.0)) < 1e-3


def test_volterra_independent_of_closed_form():
    # the quadrature solver converges on its own: halving the step barely moves it
    t1, x1 = renewal_volterra(4.0, steps=1000)
    t2, x2 = renewal_volterra(4.0, steps=2000)
    assert abs(x1[-1] / x2[-1] - 1.0) < 5e-4


def test_scaled_second_moment_is_time_change():
    # kappa u solves the unit problem at time kappa**4 t
    assert pam_second_moment(0.5, kappa=2.0) == pytest.approx(pam_second_moment(8.0), rel=1e-12)


def test_pair_covariance_pam_at_zero_separation():
    assert abs(pair_covariance(1.0, 0.0, XiCurve.pam()) - 0.9524) < 1e-3


def test_pair_covariance_constant_curve():
    assert pair_covariance(1.0, 0.0, XiCurve.constant()) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-8)


def test_pair_covariance_vanishes_far_away():
    xi = XiCurve.pam()
    vals = [pair_covariance(1.0, s, xi) for s in (1.0, 5.0, 20.0, 60.0)]
    assert all(b < a for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 1e-12


@pytest.mark.parametrize("t", [0.3, 1.0, 3.0])
@pytest.mark.parametrize("kappa", [1.0, 1.5])
def test_pair_covariance_consistency(t, kappa):
    # second moment = 1 + covariance at zero separation
    xi = XiCurve.pam(kappa)
    assert pair_covariance(t, 0.0, xi) + 1.0 == pytest.approx(pam_second_moment(t, kappa), rel=1e-7)


def test_pair_covariance_reports_achieved_tolerance():
    with pytest.raises(QuadratureError) as info:
        pair_covariance(1.0, 0.3, XiCurve.pam(), QuadratureSpec(rtol=1e-15, max_subdivisions=1, atol=0.0))
    assert info.value.achieved > 0


def _brute_window_variance(t, L, xi):
    def inner(r):
        v = 2.0 * (t - r)
        f = lambda z: heat_kernel(v, z) * (2.0 - z / L)
        return integrate.quad(f, 0.0, 2.0 * L, epsabs=1e-13, epsrel=1e-11, limit=200)[0]

    return 2.0 * L * integrate.quad(lambda r: float(xi(r)) * inner(r), 0.0, t, epsabs=1e-12, epsrel=1e-10,
                                    limit=200)[0]


@pytest.mark.parametrize("t,L", [(1.0, 0.3), (1.0, 2.0), (2.0, 1.0)])
def test_window_variance_matches_nested_quadrature(t, L):
    for xi in (XiCurve.constant(), XiCurve.pam()):
        assert gaussian_window_variance(t, L, xi) == pytest.approx(_brute_window_variance(t, L, xi), rel=1e-7)


def test_window_variance_large_window():
    v = gaussian_window_variance(1.0, 100.0, XiCurve.constant())
    delta = 1.0 - v / 200.0
    assert 0 < delta < 0.01


def test_window_variance_small_window():
    L = 0.01
    v = gaussian_window_variance(1.0, L, XiCurve.constant())
    assert v == pytest.approx(4 * L * L * math.sqrt(1 / math.pi), rel=0.02)


def test_window_variance_ratio_tends_to_one():
    xi = XiCurve.pam()
    ixi = integrate.quad(lambda r: float(xi(r)), 0, 1)[0]
    ratios = [gaussian_window_variance(1.0, L, xi) / (2 * L * ixi) for L in (5, 20, 50, 500)]
    assert all(b > a for a, b in zip(ratios, ratios[1:]))
    assert abs(ratios[-1] - 1) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 4.0), st.floats(0.05, 30.0), st.floats(1.05, 2.0))
def test_window_variance_monotone(t, L, f):
    xi = XiCurve.pam()
    v = gaussian_window_variance(t, L, xi)
    assert gaussian_window_variance(t * f, L, xi) > v
    assert gaussian_window_variance(t, L * f, xi) > v


def test_window_variance_domain():
    with pytest.raises(DomainError):
        gaussian_window_variance(0.0, 1.0, XiCurve.constant())
    with pytest.raises(DomainError):
        gaussian_window_variance(1.0, -1.0, XiCurve.constant())


def test_lattice_second_moment_converges():
    exact = pam_second_moment(1.0)
    errs = []
    for dx in (0.1, 0.05, 0.025):
        m = lattice_second_moment(dx, dx * dx / 2, int(round(16 / dx)), int(round(2 / dx**2)), kappa=1.0)
        errs.append(abs(m[-1] - exact))
    assert errs[0] > errs[1] > errs[2]
    assert errs[2] < 0.02
    assert errs[2] < 0.6 * errs[1]


def test_xi_table_interpolates():
    xi = XiCurve.table([0, 1, 2], [1, 2, 4])
    assert xi(1.5) == pytest.approx(3.0)
    assert xi.tag == "empirical-table"
