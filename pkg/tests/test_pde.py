import numpy as np
import pytest

from longrun.errors import DomainError, GridError
from longrun.models import ConstantMprModel, MmmModel
from longrun.pde import (
    Grid2D,
    boundary_check,
    crra_terminal_payout,
    hjb_foc_check,
    pde_residual,
    spatial_boundary_ok,
)
from longrun.strategy import Preferences, build_value_function, lifetime_utility

MMM = MmmModel(0.1828, 0.0520)
BS = ConstantMprModel(0.2)


def test_grid_validation():
    Grid2D.uniform(0, 1, 5, 0.5, 2, 5)
    with pytest.raises(GridError):
        Grid2D.uniform(0, 1, 4, 0.5, 2, 5)
    with pytest.raises(GridError):
        Grid2D.uniform(0, 1, 5, 0.0, 2, 5)
    with pytest.raises(GridError):
        Grid2D(np.linspace(0, 1, 6), np.array([0.1, 0.2, 0.4, 0.8, 1.6]))


def test_log_consumption_residual_small():
    vf = build_value_function(Preferences(1.0, 0.03, 1.0, 1, 30.0), MMM, 1.0)
    rep = pde_residual(vf, None, MMM, Grid2D.uniform(0.0, 29.0, 101, 0.5, 3.0, 101))
    assert rep.interior_rms < 1e-6
    assert rep.boundary_max_error < 1e-10
    assert rep.residual.shape == (99, 99)


def test_perturbation_detected():
    vf = build_value_function(Preferences(1.0, 0.03, 1.0, 1, 30.0), MMM, 1.0)
    grid = Grid2D.uniform(0.0, 29.0, 101, 0.5, 3.0, 101)
    rep = pde_residual(lambda t, v: vf(t, v) + 0.01 * v * np.sin(t), vf.consumption, MMM, grid, chi=1)
    assert rep.interior_rms > 1e-3


def test_dropping_consumption_detected():
    vf = build_value_function(Preferences(1.0, 0.03, 1.0, 1, 30.0), MMM, 1.0)
    rep = pde_residual(vf, None, MMM, Grid2D.uniform(0.0, 29.0, 41, 0.5, 3.0, 41), chi=0, terminal=vf.terminal_wealth)
    assert rep.interior_rms > 1e-3


@pytest.mark.parametrize("model", [MMM, BS])
def test_power_terminal_second_order_refinement(model):
    vf = build_value_function(Preferences(3.0, 0.0, 1.0, 0, 10.0), model, 1.0)
    coarse = pde_residual(vf, None, model, Grid2D.uniform(0.0, 9.0, 21, 0.5, 2.5, 21))
    fine = pde_residual(vf, None, model, Grid2D.uniform(0.0, 9.0, 41, 0.5, 2.5, 41))
    assert 3.0 < coarse.interior_rms / fine.interior_rms < 5.0


def test_callable_diffusion_matches_model():
    vf = build_value_function(Preferences(3.0, 0.0, 1.0, 0, 10.0), BS, 1.0)
    grid = Grid2D.uniform(0.0, 9.0, 21, 0.5, 2.5, 21)
    a = pde_residual(vf, None, BS, grid)
    b = pde_residual(vf, None, lambda t, v: 0.04 * v**2, grid)
    np.testing.assert_allclose(a.residual, b.residual, rtol=1e-12, atol=1e-15)
    assert set(a.to_dict()) >= {"max_abs_residual", "interior_rms", "boundary_max_error"}


def test_consumption_required():
    with pytest.raises(DomainError):
        pde_residual(lambda t, v: v, None, MMM, Grid2D.uniform(0, 1, 5, 0.5, 2, 5), chi=1)


def test_unevaluable_surface_is_grid_error():
    vf = build_value_function(Preferences(3.0, 0.0, 1.0, 0, 10.0), MMM, 1.0)
    with pytest.raises(GridError):
        pde_residual(lambda t, v: np.full_like(t, np.nan), None, MMM, Grid2D.uniform(0, 9, 5, 0.5, 2, 5), chi=0)
    # epsilon = 0 forbids the terminal comparison
    with pytest.raises(DomainError):
        boundary_check(vf, Preferences(3.0, 0.0, 0.0, 1, 10.0), vf.lam, [1.0])


@pytest.mark.parametrize("model", [MMM, BS])
@pytest.mark.parametrize("gamma", [1.0, 3.0])
def test_terminal_boundary(model, gamma):
    prefs = Preferences(gamma, 0.02, 1.0, 0, 10.0)
    vf = build_value_function(prefs, model, 1.0)
    v = np.linspace(0.1, 10, 50)
    assert boundary_check(vf, prefs, vf.lam, v) < 1e-10
    np.testing.assert_allclose(crra_terminal_payout(prefs, vf.lam)(v), vf.terminal_wealth(v), rtol=1e-12)
    wrong = crra_terminal_payout(prefs, 1.1 * vf.lam)
    assert np.max(np.abs(vf(10.0, v) / wrong(v) - 1)) > 1e-3


def test_spatial_boundaries():
    vf = build_value_function(Preferences(3.0, 0.0, 1.0, 0, 10.0), MMM, 1.0)
    times = np.linspace(0, 9, 5)
    assert spatial_boundary_ok(vf, times)
    assert not spatial_boundary_ok(lambda t, v: np.ones_like(v), times)


def _foc(n, gamma=1.0, scale=1.0):
    prefs = Preferences(gamma, 0.03, 1.0, 1, 30.0)
    vf = build_value_function(prefs, BS, 1.0)
    grid = Grid2D.uniform(0.0, 29.0, n, 1.0, 3.0, n)
    return hjb_foc_check(lambda t, v: lifetime_utility(vf, t, v), vf, prefs, grid,
                         lambda t, v: scale * vf.consumption(t, v))


def test_first_order_condition_holds():
    fine = _foc(101)
    assert fine < 1e-5
    assert _foc(51) / fine > 8.0


def test_first_order_condition_power_refines():
    # marginal utility is of order 1e4 here, so compare absolute errors by refinement
    assert _foc(51, 3.0) / _foc(101, 3.0) > 8.0


def test_first_order_condition_detects_wrong_consumption():
    assert _foc(51, scale=1.1) > 100 * _foc(51)


def test_first_order_check_needs_consumption():
    with pytest.raises(DomainError):
        hjb_foc_check(None, None, Preferences(3.0), Grid2D.uniform(0, 1, 5, 1, 2, 5), None)
