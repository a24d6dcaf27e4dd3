import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import lognormal_power_moment, mmm_log_moment, mmm_power_moment
from longrun.errors import DivergenceError, DomainError, InsufficientSampleError, UnsupportedMethodError
from longrun.models import ConstantMprModel, MmmModel, TimeGrid, mmm_phi, simulate_gp
from longrun.pricing import (
    CONSISTENT,
    INCONSISTENT,
    SUPERMARTINGALE,
    ConsumptionStream,
    PowerMomentQuery,
    PowerPayout,
    benchmark,
    exponent_from_gamma,
    fair_price,
    fair_price_dv,
    gamma_series,
    gp_log_moment,
    gp_power_moment,
    gp_power_moment_mc,
    martingale_check,
    power_moment,
    power_moment_dv,
)

MMM = MmmModel(0.1828, 0.0520)
BS = ConstantMprModel(0.2)


def test_exponent_mapping():
    assert exponent_from_gamma(1.0) == 0.0
    assert exponent_from_gamma(0.5) == 1.0
    assert exponent_from_gamma(math.inf) == -1.0
    with pytest.raises(DomainError):
        exponent_from_gamma(0.0)


def test_query_validation():
    with pytest.raises(DomainError):
        PowerMomentQuery(MMM, -0.5, 2.0, 1.0, 1.0)
    with pytest.raises(DomainError):
        PowerMomentQuery(MMM, -0.5, 0.0, 0.0, 1.0)


@settings(max_examples=50)
@given(st.floats(0, 40), st.floats(0.01, 10), st.floats(0, 40))
def test_log_utility_moment_is_one(t, v, h):
    for model in (MMM, BS):
        for method in ("closed_form", "series") if model is MMM else ("closed_form",):
            assert gp_power_moment(PowerMomentQuery.from_gamma(model, 1.0, t, v, t + h), method) == 1.0


def test_gamma_half_identity():
    q = PowerMomentQuery.from_gamma(MMM, 0.5, 0.0, 1.0, 10.0)
    assert gp_power_moment(q) == pytest.approx(1 + 4 * mmm_phi(MMM, 10.0), rel=1e-14)
    assert gp_power_moment(q) == pytest.approx(3.39760, abs=5e-5)


def test_constant_mpr_example():
    q = PowerMomentQuery.from_gamma(BS, 3.0, 0.0, 1.0, 9.0)
    assert gp_power_moment(q) == pytest.approx(math.exp(-0.04), rel=1e-15)


@pytest.mark.parametrize("p", [-1.0, -0.8, -2 / 3, -0.5, -0.1, 0.4, 1.0, 2.0])
@pytest.mark.parametrize("dt", [0.5, 9.0, 40.0])
def test_constant_mpr_matches_gauss_hermite(p, dt):
    got = power_moment(BS, p, 1.0, 1.7, 1.0 + dt)
    assert got == pytest.approx(lognormal_power_moment(0.2, p, 1.7, dt), rel=1e-12)


@pytest.mark.parametrize("p", [-1.0, -0.8, -2 / 3, -0.5, -0.2, 1.0])
@pytest.mark.parametrize("t,v,s", [(0.0, 1.0, 1.0), (0.0, 1.0, 50.0), (12.0, 0.3, 20.0), (3.0, 4.0, 33.0)])
def test_mmm_closed_form_matches_noncentral_chi2(p, t, v, s):
    want = mmm_power_moment(0.1828, 0.052, p, t, v, s)
    assert float(power_moment(MMM, p, t, v, s)) == pytest.approx(want, rel=1e-10)


@pytest.mark.parametrize("p", [-1.0, -2 / 3, -0.5, -0.2])
def test_series_matches_closed_form(p):
    t = np.array([0.0, 5.0, 10.0, 0.0])
    v = np.array([1.0, 0.2, 3.0, 1e-3])
    s = np.array([1.0, 30.0, 60.0, 90.0])
    np.testing.assert_allclose(power_moment(MMM, p, t, v, s, "series"), power_moment(MMM, p, t, v, s), rtol=1e-11)


def test_series_at_zero_exponent_collapses_to_one():
    y = np.array([1e-3, 0.5, 3.0, 40.0, 900.0])
    np.testing.assert_allclose(gamma_series(0.0, y), 1.0, atol=1e-12)


def test_unsupported_and_divergent():
    with pytest.raises(UnsupportedMethodError):
        gp_power_moment(PowerMomentQuery(MMM, 0.5, 0, 1, 1), "series")
    with pytest.raises(UnsupportedMethodError):
        gp_power_moment(PowerMomentQuery(MMM, 0.5, 0, 1, 1), "closed_form")
    with pytest.raises(UnsupportedMethodError):
        gp_power_moment(PowerMomentQuery(BS, -0.5, 0, 1, 1), "series")
    with pytest.raises(DivergenceError):
        gp_power_moment(PowerMomentQuery(MMM, -2.0, 0, 1, 1), "monte_carlo")
    with pytest.raises(DomainError):
        gp_power_moment(PowerMomentQuery(MMM, -0.5, 0, 1, 1), tol=0.0)


def test_gamma_below_one_falls_back_to_monte_carlo():
    q = PowerMomentQuery(MMM, 0.5, 0.0, 1.0, 10.0)
    est = gp_power_moment_mc(q, 100_000, 3)
    want = mmm_power_moment(0.1828, 0.052, 0.5, 0.0, 1.0, 10.0)
    assert abs(est.mean - want) < 3 * est.standard_error


def test_series_vs_monte_carlo_single_case():
    q = PowerMomentQuery.from_gamma(MMM, 3.0, 0.0, 1.0, 10.0)
    est = gp_power_moment_mc(q, 100_000, 1)
    assert abs(gp_power_moment(q, "series") - est.mean) < 3 * est.standard_error


def test_tower_property_constant_mpr():
    p = -0.6
    direct = power_moment(BS, p, 0.0, 1.3, 10.0)
    # E[V_10^p | V_0] = E[ E[V_10^p | V_4] | V_0 ] = e^{c 6} E[V_4^p | V_0]
    inner_rate = power_moment(BS, p, 4.0, 1.0, 10.0)
    assert direct == pytest.approx(inner_rate * power_moment(BS, p, 0.0, 1.3, 4.0), rel=1e-12)


def test_tower_property_mmm_monte_carlo():
    p = -2 / 3
    direct = float(power_moment(MMM, p, 0.0, 1.0, 20.0))
    mid = simulate_gp(MMM, TimeGrid(0.0, 8.0, 1), 100_000, 21).values[:, -1]
    nested = power_moment(MMM, p, 8.0, mid, 20.0)
    se = nested.std(ddof=1) / math.sqrt(nested.size)
    assert abs(nested.mean() - direct) < 3 * se


@pytest.mark.parametrize("model", [MMM, BS])
@pytest.mark.parametrize("p", [-1.0, -2 / 3, -0.3, 1.0])
def test_moment_derivative_matches_finite_difference(model, p):
    v, h = 1.4, 1e-5
    fd = (power_moment(model, p, 2.0, v + h, 12.0) - power_moment(model, p, 2.0, v - h, 12.0)) / (2 * h)
    assert float(power_moment_dv(model, p, 2.0, v, 12.0)) == pytest.approx(float(fd), rel=1e-7)
    if model is MMM and p != 1.0:
        assert float(power_moment_dv(model, p, 2.0, v, 12.0, "series")) == pytest.approx(float(fd), rel=1e-7)


def test_log_moment_constant_mpr():
    assert float(gp_log_moment(BS, 1.0, 2.0, 6.0)) == pytest.approx(math.log(2.0) + 0.02 * 5.0)


@pytest.mark.parametrize("t,v,s", [(0, 1, 10), (0, 1, 0.5), (0, 0.01, 30), (5, 3, 6), (0, 50, 0.01),
                                   (0, 1, 1e-3), (0, 400, 0.05), (0, 20, 0.001)])
def test_log_moment_mmm_quadrature(t, v, s):
    want = mmm_log_moment(MMM.alpha0, MMM.eta, t, v, s)
    assert float(gp_log_moment(MMM, t, v, s)) == pytest.approx(want, rel=1e-11, abs=1e-14)


def test_log_moment_mmm_monte_carlo():
    x = simulate_gp(MMM, TimeGrid(0.0, 10.0, 1), 100_000, 5).values[:, -1]
    lx = np.log(x)
    se = lx.std(ddof=1) / math.sqrt(lx.size)
    assert abs(float(gp_log_moment(MMM, 0.0, 1.0, 10.0)) - lx.mean()) < 3 * se


def test_benchmark():
    assert benchmark(5.0, 1.0) == 5.0
    assert benchmark(2.5, 2.5) == 1.0
    assert benchmark(865.14, 865.14 * 2) == 0.5
    with pytest.raises(DomainError):
        benchmark(1.0, 0.0)


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6))
def test_benchmark_inverse(a, g):
    assert benchmark(a, g) * g == pytest.approx(a, rel=1e-15)


@pytest.mark.parametrize("model", [MMM, BS])
def test_fair_price_of_gp_is_v(model):
    for v in (0.3, 1.0, 7.0):
        assert fair_price(model, 2.0, v, PowerPayout(0.0, 20.0)) == v


def test_fair_price_gamma_half_payout():
    assert fair_price(MMM, 0.0, 1.0, PowerPayout(1.0, 10.0)) == pytest.approx(1 + 4 * mmm_phi(MMM, 10.0))


def test_stream_vanishes_on_empty_interval():
    stream = ConsumptionStream(-0.5, 0.01, 5.0, bequest=0.0)
    assert fair_price(MMM, 5.0, 1.3, stream) == 0.0
    assert fair_price(MMM, 5.0 - 1e-9, 1.3, stream) < 1e-8


def test_stream_quadrature_matches_adaptive_integral():
    from scipy import integrate
    p, rho, T = -2 / 3, 0.02, 25.0
    stream = ConsumptionStream(p, rho, T, bequest=0.7)
    f = lambda s: math.exp(-rho * s) * float(power_moment(MMM, p, 3.0, 1.2, s))
    integral, _ = integrate.quad(f, 3.0, T, epsabs=0, epsrel=1e-13)
    want = 1.2 * (integral + 0.7 * math.exp(-rho * T) * float(power_moment(MMM, p, 3.0, 1.2, T)))
    assert fair_price(MMM, 3.0, 1.2, stream) == pytest.approx(want, rel=1e-10)


@pytest.mark.parametrize("model", [MMM, BS])
def test_fair_price_derivative(model):
    stream = ConsumptionStream(-0.5, 0.03, 15.0, bequest=1.0)
    h = 1e-5
    fd = (fair_price(model, 1.0, 0.9 + h, stream) - fair_price(model, 1.0, 0.9 - h, stream)) / (2 * h)
    assert fair_price_dv(model, 1.0, 0.9, stream) == pytest.approx(fd, rel=1e-7)


def test_martingale_check_verdicts():
    ones = np.ones((500, 10))
    d = martingale_check(ones)
    assert d.mean_drift == 0.0 and d.verdict == CONSISTENT
    rng = np.random.default_rng(0)
    up = np.column_stack([np.ones(1000), 1.5 + 0.1 * rng.standard_normal(1000)])
    assert martingale_check(up).verdict == INCONSISTENT
    assert martingale_check(2.0 - up).verdict == SUPERMARTINGALE
    with pytest.raises(InsufficientSampleError):
        martingale_check(np.ones((99, 3)))


def test_benchmarked_gp_paths_are_consistent():
    ps = simulate_gp(MMM, TimeGrid(0, 20, 20), 500, 1)
    assert martingale_check(benchmark(ps.values, ps.values)).verdict == CONSISTENT


def test_benchmarked_gp_power_is_martingale():
    # V_t * E[V_T^p | V_t] / V_t is a martingale in t
    ps = simulate_gp(MMM, TimeGrid(0, 10, 2), 100_000, 77)
    vals = power_moment(MMM, -2 / 3, ps.times, ps.values, 10.0)
    assert martingale_check(vals).verdict == CONSISTENT
