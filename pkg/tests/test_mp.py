import warnings

import numpy as np
import pytest

from adjoint import check_k_vanishes, solve_adjoints
from errors import (
    EmptyGrid,
    GridError,
    InadmissibleControl,
    KHypothesisNotVerified,
)
from lq import lq_exact_adjoints
from mp import (
    HamiltonianInput,
    classical_margin,
    hamiltonian,
    margin_estimate,
    mp_margin,
    scan_max_condition,
    scan_values,
)
from sdde import (
    ControlProcess,
    DelayProblem,
    EvalPoint,
    InitialData,
    OptimalPair,
    simulate,
)


@pytest.fixture
def lq_adjoints(lq_params, grid):
    adjoints = lq_exact_adjoints(lq_params, grid)
    return adjoints, check_k_vanishes(adjoints, 0.02)


def _input(v, vd, p=1.0, q=0.0, P=0.0, anchor_u=0.0):
    zeros = np.zeros(3)
    anchor = EvalPoint(0.0, zeros, zeros, np.full(3, anchor_u), zeros)
    return HamiltonianInput(
        tau=0.0,
        x=zeros,
        xd=zeros,
        v=np.full(3, v),
        vd=np.full(3, vd),
        p=p,
        q=q,
        P=P,
        anchor=anchor,
    )


def test_hamiltonian_lq(lq_params):
    value = hamiltonian(lq_params.problem(), _input(2.0, -1.0))
    # N v^2 + Nbar v_d^2 + p (M v + Mbar v_d)
    assert np.allclose(value, 4.0 + 1.0 + 4.0 - 2.0)


def test_hamiltonian_second_order_term():
    problem = DelayProblem(name="vol", sigma=lambda t, x, xd, v, vd: v)
    value = hamiltonian(problem, _input(3.0, 0.0, p=0.0, P=2.0, anchor_u=1.0))
    assert np.allclose(value, 0.5 * 2.0 * 9.0 - 2.0 * 1.0 * 3.0)


def test_lq_margins_are_closed_form(lq_pair, lq_adjoints):
    adjoints, k_report = lq_adjoints
    problem = lq_pair.problem
    # anticipated part active on [0, T - delta)
    for v in (2.0, -3.0, 1.0):
        margin = mp_margin(problem, lq_pair, adjoints, 0.25, v, k_report=k_report)
        assert margin == pytest.approx(2 * (v + 1) ** 2, abs=1e-9)
        margin = mp_margin(problem, lq_pair, adjoints, 0.75, v, k_report=k_report)
        assert margin == pytest.approx((v + 1) ** 2, abs=1e-9)
    margin, stderr = margin_estimate(problem, lq_pair, adjoints, 0.25, -1.0)
    assert margin == pytest.approx(0.0, abs=1e-9)
    assert stderr < 1e-9


def test_classical_margin(lq_pair, lq_adjoints):
    adjoints, _ = lq_adjoints
    margin = classical_margin(lq_pair.problem, lq_pair, adjoints, 0.25, 2.0)
    assert margin == pytest.approx(9.0)


def test_margin_preconditions(lq_pair, lq_adjoints):
    adjoints, k_report = lq_adjoints
    problem = lq_pair.problem
    with pytest.raises(InadmissibleControl):
        mp_margin(problem, lq_pair, adjoints, 0.25, 0.0, k_report=k_report)
    with pytest.raises(GridError):
        mp_margin(problem, lq_pair, adjoints, 1.25, 2.0, k_report=k_report)


def test_missing_k_report_warns(lq_pair, lq_adjoints):
    adjoints, _ = lq_adjoints
    with pytest.warns(KHypothesisNotVerified):
        mp_margin(lq_pair.problem, lq_pair, adjoints, 0.25, 2.0)


def test_scan_values_adds_boundary(lq_params):
    values = scan_values(lq_params.problem(), [2.0, -3.0])
    assert values == [-3.0, -1.0, 1.0, 2.0]
    assert scan_values(lq_params.problem(), [2.0], include_boundary=False) == [2.0]


def test_scan_passes_for_closed_form(lq_pair, lq_adjoints, grid):
    adjoints, k_report = lq_adjoints
    taus = [grid.time_of(i) for i in range(grid.n_steps + 1)]
    kwargs = dict(tol=1e-9, k_report=k_report)
    with warnings.catch_warnings():
        warnings.simplefilter("error", KHypothesisNotVerified)
        report = scan_max_condition(
            lq_pair.problem, lq_pair, adjoints, [-2.0, 1.5, 3.0], taus, **kwargs
        )
    assert report.passed
    assert not report.advisory
    assert report.boundary_index == grid.n_steps - grid.m
    assert report.min_margin == pytest.approx(0.0, abs=1e-9)
    assert report.argmin(0.25) == -1.0
    assert len(report.to_records()) == len(taus) * 5

    threaded = scan_max_condition(
        lq_pair.problem, lq_pair, adjoints, [-2.0, 1.5, 3.0], taus, workers=3, **kwargs
    )
    assert threaded.cells == report.cells


def test_scan_flags_a_suboptimal_candidate(lq_params, grid, ens, lq_adjoints):
    adjoints, k_report = lq_adjoints
    problem = lq_params.problem()
    init = lq_params.init(grid)
    control = ControlProcess.constant(grid, ens.n_paths, 1.0, init.eta)
    paths = simulate(problem, control, init, grid, ens)
    pair = OptimalPair(problem=problem, paths=paths, control=control, init=init)
    report = scan_max_condition(
        problem, pair, adjoints, [-1.0, 2.0], [0.25, 0.75], k_report=k_report
    )
    assert not report.passed
    assert {cell["v"] for cell in report.violations} == {-1.0}


def test_scan_without_k_report_is_advisory(smooth, grid, ens):
    pair = smooth.pair(grid, ens)
    adjoints = solve_adjoints(smooth.problem, pair, ens)
    with pytest.warns(KHypothesisNotVerified):
        report = scan_max_condition(
            smooth.problem, pair, adjoints, [1.0], [0.0, 0.25, 0.75]
        )
    assert report.advisory
    assert {cell["v"] for cell in report.cells} == {-1.0, 1.0}


def test_scan_rejects_empty_grids(lq_pair, lq_adjoints):
    adjoints, k_report = lq_adjoints
    with pytest.raises(EmptyGrid):
        scan_max_condition(lq_pair.problem, lq_pair, adjoints, [], [0.0])
    with pytest.raises(EmptyGrid):
        scan_max_condition(lq_pair.problem, lq_pair, adjoints, [2.0], [])


def test_hamiltonian_folds_at_the_candidate(smooth):
    problem = smooth.problem
    rng = np.random.default_rng(4)
    n = 64
    x, xd = rng.normal(1.0, 0.5, n), rng.normal(1.0, 0.5, n)
    u, ud = rng.choice([-1.0, 1.0], n), rng.choice([-1.0, 1.0], n)
    p, q, P = rng.normal(size=n), rng.normal(size=n), rng.normal(size=n)
    anchor = EvalPoint(0.3, x, xd, u, ud)
    inp = HamiltonianInput(0.3, x, xd, u, ud, p, q, P, anchor)
    sigma = problem.coefficient("sigma", anchor)
    folded = (
        problem.coefficient("l", anchor)
        + p * problem.coefficient("b", anchor)
        + q * sigma
        - 0.5 * P * sigma**2
    )
    assert np.allclose(hamiltonian(problem, inp), folded, rtol=1e-12, atol=1e-12)


def test_scan_with_solved_adjoints(lq_pair, grid, ens):
    adjoints = solve_adjoints(lq_pair.problem, lq_pair, ens)
    k_report = check_k_vanishes(adjoints, 0.02)
    assert k_report["pass"]
    taus = [grid.time_of(i) for i in range(grid.n_steps + 1)]
    report = scan_max_condition(
        lq_pair.problem, lq_pair, adjoints, [1.0], taus, k_report=k_report
    )
    assert report.passed
    for cell in report.cells:
        if cell["v"] != 1.0:
            continue
        before = cell["tau"] < grid.T - grid.delta
        assert cell["margin"] == pytest.approx(8.0 if before else 4.0, abs=2e-2)


def test_no_delay_margin_is_classical(grid, ens):
    problem = DelayProblem(
        name="undelayed",
        b=lambda t, x, xd, v, vd: 0.5 * x + v,
        sigma=lambda t, x, xd, v, vd: 0.3 * x + 0.2 * v,
        l=lambda t, x, xd, v, vd: v**2,
        h_term=lambda x: x,
        b_x=lambda t, x, xd, v, vd: 0.5,
        sigma_x=lambda t, x, xd, v, vd: 0.3,
        h_x=lambda x: 1.0,
    )
    init = InitialData.constant(grid, 1.0, 0.0)
    control = ControlProcess.constant(grid, ens.n_paths, 0.0, init.eta)
    paths = simulate(problem, control, init, grid, ens)
    pair = OptimalPair(problem=problem, paths=paths, control=control, init=init)
    adjoints = solve_adjoints(problem, pair, ens)
    k_report = check_k_vanishes(adjoints, 0.02)
    for tau in (0.25, 0.75):
        for v in (-1.0, 0.5, 2.0):
            margin = mp_margin(problem, pair, adjoints, tau, v, k_report=k_report)
            expected = classical_margin(problem, pair, adjoints, tau, v)
            assert margin == pytest.approx(expected, abs=1e-12)
