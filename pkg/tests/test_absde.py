import numpy as np
import pytest

from absde import (
    AbsdeSpec,
    RegressionBasis,
    generator_slopes,
    martingale_profile,
    martingale_residual,
    solve_absde,
)
from core import make_grid, node_means, sample_brownian
from errors import EnsembleMismatch, IllConditionedRegression
from problems import (
    BLOCK_RECURSION_Y0,
    block_recursion_spec,
    brownian_forward,
    constant_martingale_spec,
)


@pytest.fixture
def fine():
    grid = make_grid(1.0, 0.5, 8)
    ens = sample_brownian(grid, 300, 2)
    return grid, ens, brownian_forward(grid, ens)


def test_block_recursion_matches_oracle(fine):
    grid, ens, forward = fine
    sol = solve_absde(block_recursion_spec(), grid, forward, ens)
    y0 = node_means(sol.y)[0]
    # explicit scheme on h = 1/16 carries a 0.125 / m bias
    assert y0 == pytest.approx(BLOCK_RECURSION_Y0 + 0.125 / grid.m, abs=1e-9)
    assert abs(y0 - BLOCK_RECURSION_Y0) / BLOCK_RECURSION_Y0 < 1e-2
    assert np.allclose(sol.y[:, grid.n_steps :], 1.0)


def test_constant_martingale(fine):
    grid, ens, forward = fine
    spec = constant_martingale_spec()
    sol = solve_absde(spec, grid, forward, ens)
    assert np.allclose(sol.y, 1.0)
    assert np.max(np.abs(sol.z)) < 1e-10
    assert martingale_residual(sol, spec, grid, ens) < 1e-20
    assert len(martingale_profile(sol, spec, grid, ens)) == grid.n_backward_nodes


def test_brownian_terminal_gives_unit_z():
    grid = make_grid(1.0, 0.5, 8)
    ens = sample_brownian(grid, 2000, 4)
    forward = brownian_forward(grid, ens)
    spec = AbsdeSpec(
        name="brownian",
        generator=lambda t, y, z, a, b, state: 0.0,
        terminal=lambda k, x: np.array(x, dtype=float),
    )
    sol = solve_absde(spec, grid, forward, ens)
    assert abs(np.mean(sol.z[:, : grid.n_steps]) - 1.0) < 0.05
    assert abs(node_means(sol.y)[0]) < 0.05


def test_regression_basis_order():
    assert RegressionBasis(degree=1).exponents() == [(0, 0), (1, 0), (0, 1)]
    assert RegressionBasis(degree=2).size == 6


def test_projector_drops_constant_regressors():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(50)
    proj = RegressionBasis(degree=2).projector(x, np.zeros(50))
    assert proj.regressors == [(0, 0), (1, 0), (2, 0)]
    (fitted,) = proj(3.0 + 2.0 * x)
    assert np.allclose(fitted, 3.0 + 2.0 * x)


def test_ill_conditioned_regression():
    rng = np.random.default_rng(1)
    x, xd = rng.standard_normal(40), rng.standard_normal(40)
    strict = RegressionBasis(degree=2, cond_limit=1.0, ridge_enabled=False)
    with pytest.raises(IllConditionedRegression):
        strict.projector(x, xd)

    ridged = RegressionBasis(degree=2, cond_limit=1.0).projector(x, xd)
    assert ridged.ridged
    (fitted,) = ridged(1.0 + x)
    assert np.allclose(fitted, 1.0 + x, atol=1e-3)


def test_too_few_paths_for_basis():
    grid = make_grid(1.0, 0.5, 2)
    ens = sample_brownian(grid, 10, 0)
    with pytest.raises(EnsembleMismatch):
        solve_absde(
            constant_martingale_spec(), grid, brownian_forward(grid, ens), ens
        )


def test_generator_slopes(fine):
    _, _, forward = fine
    slopes = generator_slopes(block_recursion_spec(), forward)
    assert slopes["a"] == pytest.approx(1.0, rel=1e-6)
    assert slopes["y"] == slopes["z"] == slopes["b"] == 0.0


def test_solution_is_read_only(fine):
    grid, ens, forward = fine
    sol = solve_absde(constant_martingale_spec(), grid, forward, ens)
    assert not sol.y.flags.writeable
    assert sol.diagnostics["degree"] == 2
