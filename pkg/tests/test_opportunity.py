import pytest
import sys
import os

import numpy as np

# Add project root to path
sys.path.append(os.path.join(os.path.dirname(__file__), '..'))

from conemv.models.cones import FullSpace, LinearSpan, NonnegativeOrthant, Polyhedral, Ray, ZeroCone
from conemv.models.market import build_levy_model, deterministic_joint_characteristics
from conemv.services.gfun import eval_g, minimize_g, no_shortselling_minimizer
from conemv.services.opportunity import (
    adjustment,
    grid_to_rows,
    opportunity_at,
    solve_opportunity,
    solve_unconstrained,
)
from conemv.utils.exceptions import MinimizerUnbounded, NonPositiveL, OutOfRange


def black_scholes_error(model, n_steps, scheme):
    grid, _ = solve_opportunity(model, FullSpace(1), n_steps, scheme)
    exact = np.exp(-0.16 * (1.0 - grid.times))
    return float(np.max(np.abs(grid.l_plus - exact)))


def test_driftless_model(brownian):
    grid, policy = solve_opportunity(brownian, FullSpace(1), 20)
    np.testing.assert_array_equal(grid.l_plus, np.ones(21))
    np.testing.assert_array_equal(grid.l_minus, np.ones(21))
    np.testing.assert_array_equal(policy.psi_plus, np.zeros((21, 1)))
    np.testing.assert_array_equal(policy.psi_minus, np.zeros((21, 1)))


def test_black_scholes_closed_form(black_scholes):
    """Test L(t) = exp(-(b^2/c)(T - t)) and psi = -b/c"""
    grid, policy = solve_opportunity(black_scholes, FullSpace(1), 1000, "rk4")
    exact = np.exp(-0.16 * (1.0 - grid.times))
    assert np.max(np.abs(grid.l_plus - exact)) <= 1e-8
    assert np.max(np.abs(grid.l_minus - exact)) <= 1e-8
    assert grid.l_plus[0] == pytest.approx(0.852144, abs=1e-6)
    np.testing.assert_allclose(policy.psi_plus[:, 0], -2.0, atol=1e-8)
    np.testing.assert_allclose(policy.psi_minus[:, 0], 2.0, atol=1e-8)


def test_poisson_opportunity(poisson):
    grid, policy = solve_opportunity(poisson, FullSpace(1), 1000, "rk4")
    assert grid.l_plus[0] == pytest.approx(np.exp(-1.0), abs=1e-8)
    assert grid.l_minus[0] == pytest.approx(np.exp(-1.0), abs=1e-8)
    np.testing.assert_array_equal(policy.psi_minus[:, 0], 1.0)
    np.testing.assert_allclose(policy.psi_plus[:, 0], -1.0, atol=1e-10)


def test_grid_invariants(jump_diffusion_2d):
    grid, policy = solve_opportunity(jump_diffusion_2d, NonnegativeOrthant(2), 50)
    for values in (grid.l_plus, grid.l_minus):
        assert values[-1] == 1.0
        assert np.all(values > 0.0) and np.all(values <= 1.0)
        assert np.all(np.diff(values) >= -1e-14)
    assert np.all(policy.psi_plus >= 0.0) and np.all(policy.psi_minus >= 0.0)
    assert np.all(policy.min_plus <= 0.0) and np.all(policy.min_minus <= 0.0)


def test_scheme_orders(black_scholes):
    """Test error ratios under step doubling: about 2 for Euler, 16 for RK4"""
    euler_ratio = black_scholes_error(black_scholes, 10, "euler") / black_scholes_error(black_scholes, 20, "euler")
    assert 1.8 < euler_ratio < 2.2
    rk4_ratio = black_scholes_error(black_scholes, 2, "rk4") / black_scholes_error(black_scholes, 4, "rk4")
    assert 12.0 < rk4_ratio < 20.0


def test_no_shortselling_minimizers(continuous_2d):
    """Test psi+ = 0 and psi- from the projection construction"""
    grid, policy = solve_opportunity(continuous_2d, NonnegativeOrthant(2), 100)
    np.testing.assert_array_equal(policy.psi_plus, np.zeros((101, 2)))
    expected = no_shortselling_minimizer(continuous_2d)
    for i in range(101):
        np.testing.assert_allclose(policy.psi_minus[i], expected, atol=1e-8)
    np.testing.assert_array_equal(grid.l_plus, np.ones(101))


def test_unconstrained_examples(brownian, poisson):
    grid, policy = solve_unconstrained(brownian, 10)
    np.testing.assert_array_equal(grid.l_plus, np.ones(11))
    np.testing.assert_array_equal(policy.psi_plus, np.zeros((11, 1)))

    a, kappa = adjustment(poisson)
    assert a[0] == 1.0 and kappa == 1.0
    grid, policy = solve_unconstrained(poisson, 1000)
    assert grid.l_plus[0] == pytest.approx(np.exp(-1.0), abs=1e-10)
    np.testing.assert_array_equal(policy.psi_plus[:, 0], -1.0)
    np.testing.assert_array_equal(policy.psi_minus[:, 0], 1.0)


def test_unconstrained_degenerate_covariance():
    model = build_levy_model(dim=2, drift=[1.0, 1.0], diffusion=[[1.0, 1.0], [1.0, 1.0]])
    a, _ = adjustment(model)
    np.testing.assert_allclose(a, [0.5, 0.5], atol=1e-12)
    np.testing.assert_allclose(np.array([[1.0, 1.0], [1.0, 1.0]]) @ a, [1.0, 1.0], atol=1e-10)

    arbitrage = build_levy_model(dim=2, drift=[1.0, 0.0], diffusion=[[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(MinimizerUnbounded):
        adjustment(arbitrage)
    with pytest.raises(MinimizerUnbounded):
        solve_opportunity(arbitrage, FullSpace(2), 5)


def test_unconstrained_matches_full_space(model_factory):
    """Test the single-L reduction across a model battery"""
    rng = np.random.default_rng(20)
    for _ in range(8):
        dim = int(rng.integers(1, 4))
        model = model_factory(rng, dim, int(rng.integers(0, 3)))
        grid_u, policy_u = solve_unconstrained(model, 20)
        grid_f, policy_f = solve_opportunity(model, FullSpace(dim), 20)
        np.testing.assert_allclose(grid_f.l_plus, grid_u.l_plus, atol=1e-7)
        np.testing.assert_allclose(grid_f.l_minus, grid_u.l_minus, atol=1e-7)
        a, _ = adjustment(model)
        np.testing.assert_allclose(policy_f.psi_plus[0], -a, atol=1e-8)
        np.testing.assert_allclose(policy_u.psi_minus[0], a, atol=1e-12)


def test_symmetric_cone_collapse(jump_diffusion_2d):
    cone = LinearSpan.from_vectors([[1.0, 0.5]], 2)
    grid, policy = solve_opportunity(jump_diffusion_2d, cone, 20)
    np.testing.assert_allclose(grid.l_plus, grid.l_minus, atol=1e-9)
    np.testing.assert_allclose(policy.psi_plus, -policy.psi_minus, atol=1e-6)


def test_cone_monotonicity(jump_diffusion_2d):
    """Test that a smaller cone gives larger opportunity processes"""
    full, _ = solve_opportunity(jump_diffusion_2d, FullSpace(2), 20)
    orthant, _ = solve_opportunity(jump_diffusion_2d, NonnegativeOrthant(2), 20)
    ray, _ = solve_opportunity(jump_diffusion_2d, Ray(np.array([1.0, 1.0])), 20)
    assert np.all(orthant.l_plus >= full.l_plus - 1e-9)
    assert np.all(orthant.l_minus >= full.l_minus - 1e-9)
    assert np.all(ray.l_plus >= orthant.l_plus - 1e-9)
    assert np.all(ray.l_minus >= orthant.l_minus - 1e-9)


def test_invariant_battery(model_factory):
    """Test grid invariants over random models and cones"""
    rng = np.random.default_rng(21)
    for k in range(50):
        dim = int(rng.integers(1, 4))
        model = model_factory(rng, dim, int(rng.integers(0, 3)))
        cones = [FullSpace(dim), NonnegativeOrthant(dim), Ray(rng.normal(size=dim)),
                 LinearSpan.from_vectors(rng.normal(size=(1, dim)), dim),
                 Polyhedral.from_generators(rng.normal(size=(dim, dim + 1)))]
        cone = cones[k % len(cones)]
        grid, policy = solve_opportunity(model, cone, 4)
        for values in (grid.l_plus, grid.l_minus):
            assert values[-1] == 1.0
            assert np.all((values > 0.0) & (values <= 1.0))
            assert np.all(np.diff(values) >= -1e-14)
        assert np.all(policy.min_plus <= 0.0) and np.all(policy.min_minus <= 0.0)
        for psi in np.vstack([policy.psi_plus, policy.psi_minus]):
            assert cone.contains(psi, 1e-8)
        if cone.is_symmetric:
            np.testing.assert_allclose(grid.l_plus, grid.l_minus, atol=1e-8)
        full, _ = solve_opportunity(model, FullSpace(dim), 4)
        assert np.all(grid.l_plus >= full.l_plus - 1e-8)
        assert np.all(grid.l_minus >= full.l_minus - 1e-8)

def test_polyhedral_jump_minimum(model_factory):
    """Test the 3-d jump model with four generators drawn by the battery at k = 19"""
    rng = np.random.default_rng(21)
    for _ in range(20):
        dim = int(rng.integers(1, 4))
        model = model_factory(rng, dim, int(rng.integers(0, 3)))
        cones = [FullSpace(dim), NonnegativeOrthant(dim), Ray(rng.normal(size=dim)),
                 LinearSpan.from_vectors(rng.normal(size=(1, dim)), dim),
                 Polyhedral.from_generators(rng.normal(size=(dim, dim + 1)))]
    cone = cones[-1]
    assert model.dim == 3 and not model.is_continuous
    assert cone.generators().shape == (3, 4)

    jc = deterministic_joint_characteristics(model, 1.0, 1.0)
    best = minimize_g(-1, cone, model, jc)
    assert best.value == pytest.approx(-0.71955, abs=1e-4)
    np.testing.assert_allclose(best.minimizer, [-1.235, -2.413, 1.442], atol=2e-3)
    assert cone.contains(best.minimizer, 1e-8)

    for weights in rng.uniform(0.0, 3.0, size=(200, 4)):
        assert eval_g(-1, cone.generators() @ weights, model, jc).g >= best.value - 1e-10

    grid, policy = solve_opportunity(model, cone, 4)
    assert np.all(policy.min_minus <= 0.0)
    assert np.all((grid.l_minus > 0.0) & (grid.l_minus <= 1.0))



def test_time_dependent_cone(black_scholes):
    """Test a cone that closes the market from t = 0.5"""
    def cone_fn(t):
        return FullSpace(1) if t < 0.5 else ZeroCone(1)

    grid, policy = solve_opportunity(black_scholes, cone_fn, 10)
    np.testing.assert_array_equal(grid.l_plus[5:], np.ones(6))
    # the stage at t = 0.5 still sees the closed market
    assert grid.l_plus[0] == pytest.approx(np.exp(-0.08), abs=5e-3)
    assert grid.l_plus[4] < 1.0
    np.testing.assert_array_equal(policy.psi_plus[5:, 0], 0.0)


def test_nonpositive_l():
    model = build_levy_model(dim=1, drift=1.0, diffusion=0.01)
    with pytest.raises(NonPositiveL):
        solve_opportunity(model, FullSpace(1), 10, "euler")
    with pytest.raises(NonPositiveL):
        solve_unconstrained(model, 100)


def test_bad_options(black_scholes):
    with pytest.raises(OutOfRange):
        solve_opportunity(black_scholes, FullSpace(1), 0)
    with pytest.raises(OutOfRange):
        solve_opportunity(black_scholes, FullSpace(1), 10, "midpoint")


def test_grid_rows_and_interpolation(black_scholes):
    grid, policy = solve_opportunity(black_scholes, FullSpace(1), 4)
    header, rows = grid_to_rows(grid, policy)
    assert header == ["t", "L_plus", "L_minus", "min_g_plus", "min_g_minus", "psi_plus_1", "psi_minus_1"]
    assert len(rows) == 5
    assert rows[0][0] == 0.0 and rows[-1][1] == 1.0

    lp, lm = opportunity_at(grid, 0.125)
    assert lp == pytest.approx(0.5 * (grid.l_plus[0] + grid.l_plus[1]))
    assert lm == pytest.approx(lp)
    with pytest.raises(OutOfRange):
        opportunity_at(grid, 1.5)
