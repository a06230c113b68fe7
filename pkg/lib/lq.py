#!/usr/bin/env python3
"""
Linear-quadratic benchmark with delay and the nonconvex control set
U = (-inf, -1] U [1, inf)

    dX = [M v + Mbar v_d] dt + [C X_d + D v + Dbar v_d] dB
    J(v) = E[ int_0^T (N v^2 + Nbar v_d^2) dt + X(T) ]

The running cost carries no 1/2 prefactor so that it agrees with the
Hamiltonian N v^2 + Nbar v_d^2 + ... used to derive the closed form; the
value the 1/2 convention would give is reported next to it.
"""
from dataclasses import dataclass, field

import numpy as np

from adjoint import AdjointBundle, check_k_vanishes
from core import DEFAULT_TOLERANCES, path_stats
from errors import ConfigError, GridMismatch, InadmissibleAlternative
from sdde import (
    ControlProcess,
    ControlSet,
    DelayProblem,
    InitialData,
    evaluate_cost,
    path_costs,
    simulate,
    split_rays,
)
from variation import SpikeSpec, spike

COST_CONVENTION = (
    "running cost N v^2 + Nbar v_d^2 (no 1/2 prefactor), matching the Hamiltonian"
)


@dataclass(frozen=True)
class LqParams:
    M: float = 2.0
    Mbar: float = 2.0
    C: float = 0.5
    D: float = 0.3
    Dbar: float = 0.2
    N: float = 1.0
    Nbar: float = 1.0
    T: float = 1.0
    delta: float = 0.5
    x0: float = 0.0
    v0: float = -1.0
    control_set: ControlSet = field(default_factory=split_rays)

    def __post_init__(self):
        if not self.N > 0:
            raise ConfigError("lq.N", "must be positive")
        if not self.Nbar > 0:
            raise ConfigError("lq.Nbar", "must be positive")

    def problem(self):
        M, Mb, C, D, Db, N, Nb = (
            self.M,
            self.Mbar,
            self.C,
            self.D,
            self.Dbar,
            self.N,
            self.Nbar,
        )
        return DelayProblem(
            name="lq",
            b=lambda t, x, xd, v, vd: M * v + Mb * vd,
            sigma=lambda t, x, xd, v, vd: C * xd + D * v + Db * vd,
            l=lambda t, x, xd, v, vd: N * v**2 + Nb * vd**2,
            h_term=lambda x: x,
            sigma_xd=lambda t, x, xd, v, vd: C,
            h_x=lambda x: 1.0,
            control_set=self.control_set,
        )

    def init(self, grid):
        return InitialData.constant(grid, self.x0, self.v0)

    def indicator(self, tau, grid=None):
        if grid is not None:
            return grid.anticipates(grid.index_of(tau))
        return 0 <= tau < self.T - self.delta

    def quadratic(self, tau, grid=None):
        """(a, c) of the pointwise objective a v^2 + c v at tau"""
        on = self.indicator(tau, grid)
        return self.N + self.Nbar * on, self.M + self.Mbar * on


@dataclass(frozen=True)
class ClosedForm:
    tau: float
    u: float
    admissible: bool
    indicator: bool
    u_half_convention: float

    def __float__(self):
        return self.u


def closed_form_control(params, tau, grid=None):
    """u(tau) = -(M + Mbar I) / (2 (N + Nbar I)), I the indicator of [0, T - delta)"""
    if tau < 0 or tau > params.T:
        raise ValueError(f"tau={tau} lies outside [0, {params.T}]")
    a, c = params.quadratic(tau, grid)
    u = -c / (2 * a)
    return ClosedForm(
        tau=float(tau),
        u=u,
        admissible=params.control_set.admits(u),
        indicator=bool(params.indicator(tau, grid)),
        u_half_convention=-c / a,
    )


def optimal_control_value(params, tau, grid=None):
    """Minimizer of a v^2 + c v over U; the closed form when it is admissible,
    otherwise the best boundary point of U"""
    a, c = params.quadratic(tau, grid)
    candidates = list(params.control_set.boundary)
    unconstrained = -c / (2 * a)
    if params.control_set.admits(unconstrained):
        candidates.append(unconstrained)
    if not candidates:
        raise ValueError(f"no admissible candidate in U={params.control_set.name}")
    return min(candidates, key=lambda v: (a * v * v + c * v, v))


def closed_form_process(params, grid, n_paths):
    times = grid.state_times()[grid.m :]
    nodes = [closed_form_control(params, t, grid).u for t in times]
    return ControlProcess.from_nodes(
        grid, n_paths, nodes, params.init(grid).eta, label="closed form"
    )


def lq_cost(params, control, grid, ens, workers=1):
    if control.grid != grid:
        raise GridMismatch(f"control {control.label} was built on another grid")
    control.check_admissible(params.control_set)
    problem = params.problem()
    paths = simulate(problem, control, params.init(grid), grid, ens, workers)
    return evaluate_cost(problem, paths, control)


def lq_cost_exact(params, control, grid):
    """Expected cost of a deterministic control under the Euler scheme: the
    stochastic integral has zero mean, so only drift and running cost remain.
    ``control`` is a ControlProcess or a constant value (with eta = v0)."""
    if isinstance(control, ControlProcess):
        if control.grid != grid:
            raise GridMismatch(f"control {control.label} was built on another grid")
        if not control.deterministic:
            raise ValueError(
                f"exact cost needs a deterministic control, got {control.label}"
            )
        row = np.asarray(control.values[0], dtype=float)
    else:
        row = np.concatenate(
            [params.init(grid).eta, np.full(grid.n_steps + 1, float(control))]
        )
    m, N = grid.m, grid.n_steps
    v = row[m : m + N]
    vd = row[:N]
    running = params.N * v**2 + params.Nbar * vd**2
    drift = params.M * v + params.Mbar * vd
    return float(params.x0 + grid.h * np.sum(running + drift))


def lq_constant_cost(params, v):
    """Continuous-time cost of v constant on [0, T] with eta = v0"""
    T, d, v0 = params.T, params.delta, params.v0
    return (
        params.N * T * v**2
        + params.Nbar * (d * v0**2 + (T - d) * v**2)
        + params.x0
        + params.M * T * v
        + params.Mbar * (d * v0 + (T - d) * v)
    )


def lq_exact_adjoints(params, grid, n_paths=1):
    """p = 1, q = P = Q = K = 0; p is extended by 0 past T like every
    first adjoint"""
    shape = (n_paths, grid.n_backward_nodes)
    p = np.zeros(shape)
    p[:, : grid.n_steps + 1] = 1.0
    zeros = np.zeros(shape)
    for array in (p, zeros):
        array.setflags(write=False)
    return AdjointBundle(
        grid=grid, p=p, q=zeros, P=zeros, Q=zeros, K=zeros, source="exact"
    )


def default_alternatives(params, grid, n_paths):
    """Constant controls on both rays of U and one spike to v = 1 on
    [0.2, 0.3], snapped to the grid"""
    eta = params.init(grid).eta
    alternatives = [
        ControlProcess.constant(grid, n_paths, value, eta)
        for value in (1.0, -1.5, 2.0)
    ]
    tau = round(0.2 / grid.h) * grid.h
    eps = max(1, round(0.1 / grid.h)) * grid.h
    base = closed_form_process(params, grid, n_paths)
    alternatives.append(spike(base, SpikeSpec(tau=tau, eps=eps, replacement=1.0)))
    return alternatives


def verify_optimality(
    params,
    grid,
    ens,
    alternatives=None,
    workers=1,
    stderr_multiple=DEFAULT_TOLERANCES["stderr_multiple"],
):
    """Cost gaps J(alt) - J(closed form) on common random numbers, with the
    exact gap of each deterministic alternative for comparison"""
    problem = params.problem()
    init = params.init(grid)
    candidate = closed_form_process(params, grid, ens.n_paths)
    if alternatives is None:
        alternatives = default_alternatives(params, grid, ens.n_paths)
    for alt in alternatives:
        alt.check_admissible(params.control_set, error=InadmissibleAlternative)
        if alt.grid != grid:
            raise GridMismatch(f"alternative {alt.label} was built on another grid")

    base_paths = simulate(problem, candidate, init, grid, ens, workers)
    base_costs = path_costs(problem, base_paths, candidate)
    base_estimate, base_stderr = path_stats(base_costs)
    base_exact = lq_cost_exact(params, candidate, grid)

    rows = []
    for alt in alternatives:
        paths = simulate(problem, alt, init, grid, ens, workers)
        gap, stderr = path_stats(path_costs(problem, paths, alt) - base_costs)
        limit = stderr_multiple * stderr + 1e-9
        row = {"label": alt.label, "gap": gap, "stderr": stderr, "pass": gap >= -limit}
        if alt.deterministic:
            exact = lq_cost_exact(params, alt, grid) - base_exact
            row["exact_gap"] = exact
            row["matches_exact"] = abs(gap - exact) <= limit
        rows.append(row)

    return {
        "candidate": candidate.label,
        "J": base_estimate,
        "J_stderr": base_stderr,
        "J_exact": base_exact,
        "rows": rows,
        "passed": all(row["pass"] for row in rows),
    }


def lq_report_text(params, grid, verification, scan=None, k_report=None):
    """Plain-text optimality report for the lq-demo output directory"""
    head = closed_form_control(params, 0.0, grid)
    tail = closed_form_control(params, params.T, grid)
    k_report = k_report or check_k_vanishes(
        lq_exact_adjoints(params, grid).K, DEFAULT_TOLERANCES["k_vanish"]
    )
    lines = [
        "Linear-quadratic benchmark with delay",
        f"  M={params.M} Mbar={params.Mbar} C={params.C} D={params.D} "
        f"Dbar={params.Dbar} N={params.N} Nbar={params.Nbar}",
        f"  T={params.T} delta={params.delta} U={params.control_set.name}",
        f"  grid: {grid.describe()}",
        "",
        "Closed-form optimal control",
        f"  on [0, T-delta): u = {head.u:g}  (admissible: {head.admissible})",
        f"  on [T-delta, T]: u = {tail.u:g}  (admissible: {tail.admissible})",
        f"  cost convention: {COST_CONVENTION}",
        f"  with the 1/2 prefactor the unconstrained minimizer would be "
        f"{head.u_half_convention:g} on [0, T-delta) and "
        f"{tail.u_half_convention:g} on [T-delta, T]",
        "",
        f"Adjoints: p = 1, q = P = Q = K = 0 ({k_report['note']})",
        "",
        "Optimality by simulation (common random numbers)",
        f"  J(closed form) = {verification['J']!r} +/- {verification['J_stderr']!r}"
        f"  exact {verification['J_exact']!r}",
    ]
    for row in verification["rows"]:
        mark = "✓" if row["pass"] else "✗"
        line = f"  {mark} {row['label']}: gap {row['gap']!r} +/- {row['stderr']!r}"
        if "exact_gap" in row:
            line += f"  exact {row['exact_gap']!r}"
        lines.append(line)
    if scan is not None:
        lines += [
            "",
            f"Maximum condition: {'pass' if scan.passed else 'FAIL'} over "
            f"{len(scan.cells)} cells, min margin {scan.min_margin!r}",
        ]
    verdict = verification["passed"] and (scan is None or scan.passed)
    verdict_text = f"u = {head.u:g} is optimal" if verdict else "not verified"
    lines += ["", f"Verdict: {verdict_text}"]
    return "\n".join(lines) + "\n"
