import numpy as np
import pytest

from adjoint import solve_adjoints
from core import make_grid, sample_brownian
from errors import InsufficientEpsilons, SpikeOutOfRange
from lq import closed_form_process, lq_cost_exact, lq_exact_adjoints
from problems import Setup, frozen_problem
from sdde import ControlProcess, InitialData, split_rays
from variation import (
    SpikeSpec,
    check_eps_list,
    delta_table,
    log_slope,
    moments,
    order_checks,
    order_study,
    reduced_terms,
    simulate_variational,
    spike,
    variational_gap,
)


def test_spike_steps(grid):
    assert SpikeSpec(0.25, 0.25, 1.0).steps(grid) == (2, 2)
    assert SpikeSpec(0.25, 0.0, 1.0).steps(grid) == (2, 0)
    with pytest.raises(SpikeOutOfRange):
        SpikeSpec(0.25, 0.1, 1.0).steps(grid)
    with pytest.raises(SpikeOutOfRange):
        SpikeSpec(0.875, 0.25, 1.0).steps(grid)
    with pytest.raises(SpikeOutOfRange):
        SpikeSpec(0.3, 0.125, 1.0).steps(grid)


def test_spike_replaces_the_window(lq_params, grid):
    base = closed_form_process(lq_params, grid, 5)
    spiked = spike(base, SpikeSpec(0.25, 0.25, 1.0), split_rays())
    assert spiked.adapted == "deterministic"
    assert "spike" in spiked.label
    changed = [i for i in range(grid.n_steps + 1) if spiked.at(i)[0] != base.at(i)[0]]
    assert changed == [2, 3]
    assert np.all(spiked.at(2) == 1.0)
    assert spike(base, SpikeSpec(0.25, 0.0, 1.0)) is base


def test_spike_must_stay_in_control_set(lq_params, grid):
    base = closed_form_process(lq_params, grid, 2)
    with pytest.raises(SpikeOutOfRange):
        spike(base, SpikeSpec(0.25, 0.25, 0.5), split_rays())


def _random_sign_control(grid, n_paths, seed):
    rng = np.random.default_rng(seed)
    signs = rng.choice([-1.0, 1.0], (n_paths, grid.n_state_nodes))
    return ControlProcess(grid=grid, values=signs, label="random signs")


def test_deterministic_replacement_keeps_one_row(lq_params, grid):
    base = closed_form_process(lq_params, grid, 3)
    other = closed_form_process(lq_params, grid, 3)
    spiked = spike(base, SpikeSpec(0.25, 0.125, other))
    assert spiked.adapted == "deterministic"
    assert np.array_equal(spiked.values, base.values)


def test_adapted_replacement(lq_params, grid):
    base = closed_form_process(lq_params, grid, 3)
    other = _random_sign_control(grid, 3, 5)
    spiked = spike(base, SpikeSpec(0.25, 0.125, other))
    assert spiked.adapted == "adapted"
    assert not spiked.values.flags.writeable
    assert np.array_equal(spiked.at(2), other.at(2))


def test_spike_keeps_per_path_control_outside_window(grid):
    base = _random_sign_control(grid, 50, 8)
    assert base.adapted == "adapted"
    spiked = spike(base, SpikeSpec(0.25, grid.h, 1.0))
    window = grid.col(2)
    outside = np.ones(grid.n_state_nodes, dtype=bool)
    outside[window] = False
    assert np.array_equal(spiked.values[:, outside], base.values[:, outside])
    assert np.all(spiked.values[:, window] == 1.0)
    assert spiked.adapted == "adapted"


def test_linear_problem_has_exact_first_variation(lq_pair, grid, ens):
    variation = simulate_variational(
        lq_pair.problem, lq_pair, SpikeSpec(0.25, 0.25, 1.0), grid, ens
    )
    assert np.max(np.abs(variation.xi())) < 1e-12
    assert np.max(np.abs(variation.x2)) == 0.0
    m = moments(variation)
    assert set(m) == {"m1", "m2", "m3", "m4", "m5"}
    assert m["m1"] == pytest.approx(m["m2"])
    assert m["m4"] < 1e-20


def test_delta_table(lq_pair, grid):
    control = spike(lq_pair.control, SpikeSpec(0.25, 0.25, 1.0))
    d = delta_table(lq_pair, control)
    assert d["b"].shape == (lq_pair.n_paths, grid.n_steps)
    # M (1 - (-1)) at the spike, Mbar (1 - (-1)) one delay later
    assert np.allclose(d["b"][0], [0, 0, 4, 4, 0, 0, 4, 4])
    assert np.allclose(d["l"], 0.0)


def test_log_slope():
    eps = [0.01, 0.02, 0.04, 0.08]
    assert log_slope(eps, [e**2 for e in eps]) == pytest.approx(2.0)
    assert np.isnan(log_slope(eps, [1.0, 0.0, 1.0, 1.0]))


def test_check_eps_list(grid):
    with pytest.raises(InsufficientEpsilons):
        check_eps_list([0.125, 0.25], grid)
    with pytest.raises(InsufficientEpsilons):
        check_eps_list([0.1, 0.2, 0.3], grid)
    with pytest.raises(InsufficientEpsilons):
        check_eps_list([0.0, 0.125, 0.5], grid)
    assert check_eps_list([0.5, 0.125, 0.25], grid) == [0.125, 0.25, 0.5]


def test_order_study_separates_orders(smooth):
    grid = make_grid(1.0, 0.5, 16)
    ens = sample_brownian(grid, 500, 9)
    pair = smooth.pair(grid, ens)
    eps = [k * grid.h for k in (1, 2, 4, 8)]
    study = order_study(smooth.problem, pair, smooth.family, eps, grid, ens)
    slopes = study["slopes"]
    assert 0.5 < slopes["m1"] < 1.5
    assert slopes["m4"] - slopes["m1"] >= 0.3
    assert [row["eps"] for row in study["rows"]] == eps


def test_order_study_is_thread_independent(smooth, grid, ens):
    pair = smooth.pair(grid, ens)
    eps = [0.125, 0.25, 0.5]
    one = order_study(smooth.problem, pair, smooth.family, eps, grid, ens, workers=1)
    many = order_study(smooth.problem, pair, smooth.family, eps, grid, ens, workers=3)
    assert one["rows"] == many["rows"]


def test_order_study_rejects_single_epsilon(smooth, grid, ens):
    pair = smooth.pair(grid, ens)
    with pytest.raises(InsufficientEpsilons):
        order_study(smooth.problem, pair, smooth.family, [0.125], grid, ens)


def test_variational_gap_lq(lq_params, lq_pair, grid, ens):
    s = SpikeSpec(0.25, 0.25, 1.0)
    adjoints = lq_exact_adjoints(lq_params, grid)
    gap = variational_gap(lq_pair.problem, lq_pair, s, adjoints, grid, ens)
    exact = lq_cost_exact(lq_params, spike(lq_pair.control, s), grid) - lq_cost_exact(
        lq_params, lq_pair.control, grid
    )
    assert exact == pytest.approx(2.0)
    assert gap["lhs25"]["estimate"] == pytest.approx(exact)
    for name in ("lhs16", "cost_gap"):
        estimate, stderr = gap[name]["estimate"], gap[name]["stderr"]
        assert abs(estimate - exact) <= 4 * stderr + 1e-9, name


def test_reduced_terms_vanish_for_lq(lq_params, lq_pair, grid, ens):
    s = SpikeSpec(0.25, 0.25, 1.0)
    variation = simulate_variational(lq_pair.problem, lq_pair, s, grid, ens)
    terms = reduced_terms(lq_pair, lq_exact_adjoints(lq_params, grid), variation)
    for name in ("delayed", "state", "cross"):
        assert terms[name]["estimate"] == 0.0
    assert terms["intermediate"]["estimate"] == pytest.approx(2.0)


def test_drift_only_spike_has_slope_two(grid, ens):
    setup = Setup(
        name="frozen",
        problem=frozen_problem(),
        init=lambda g: InitialData.constant(g, 0.0, -1.0),
        candidate=lambda g, n: ControlProcess.constant(g, n, -1.0, np.full(g.m, -1.0)),
    )
    pair = setup.pair(grid, ens)
    study = order_study(
        setup.problem, pair, setup.family, [0.125, 0.25, 0.5], grid, ens
    )
    assert study["slopes"]["m1"] == pytest.approx(2.0, abs=1e-9)
    assert study["rows"][0]["m1"] == pytest.approx((2 * 0.125) ** 2)


def test_variational_gap_smooth(smooth):
    grid = make_grid(1.0, 0.5, 16)
    ens = sample_brownian(grid, 400, 17)
    pair = smooth.pair(grid, ens)
    adjoints = solve_adjoints(smooth.problem, pair, ens)

    still = variational_gap(
        smooth.problem, pair, smooth.family(0.0), adjoints, grid, ens
    )
    for name in ("lhs16", "lhs25", "cost_gap"):
        assert still[name]["estimate"] == 0.0, name

    gap = variational_gap(
        smooth.problem, pair, smooth.family(grid.h), adjoints, grid, ens
    )
    cost_gap = gap["cost_gap"]["estimate"]
    assert cost_gap > 0
    # h = x and l = v^2 on U = {-1, 1}: the two differ by E[x^eps - x - x1 - x2](T)
    assert abs(gap["lhs16"]["estimate"] - cost_gap) < 0.1 * cost_gap
    assert np.isfinite(gap["lhs25"]["estimate"])


def test_order_checks():
    good = {"m1": 1.1, "m4": 2.0}
    assert all(order_checks(good).values())
    assert order_checks({"m1": 0.7, "m4": 2.0})["m1_band"] is False
    assert order_checks({"m1": 1.1, "m4": 1.25})["m4_floor"] is False
    assert order_checks({"m1": 1.19, "m4": 1.35})["separation"] is False
    assert not any(order_checks({"m1": float("nan"), "m4": float("nan")}).values())
    assert all(order_checks({"m1": 2.2, "m4": 4.0}, p=2).values())


@pytest.mark.slow
def test_order_bands_at_full_scale(smooth):
    grid = make_grid(1.0, 0.5, 128)
    ens = sample_brownian(grid, 20000, 7, workers=4)
    pair = smooth.pair(grid, ens, workers=4)
    eps = [k * grid.h for k in (8, 16, 32, 64)]
    study = order_study(
        smooth.problem, pair, smooth.family, eps, grid, ens, workers=4
    )
    slopes = study["slopes"]
    assert 0.8 <= slopes["m1"] <= 1.2
    assert slopes["m4"] >= 1.3
    assert all(order_checks(slopes).values())
