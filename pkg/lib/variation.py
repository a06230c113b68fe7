#!/usr/bin/env python3
"""
Spike variations of a candidate control, the first- and second-order
variational equations, and the empirical checks built on them: the order
estimates in epsilon and the variational inequality.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from adjoint import BRDE_NAMES, brde_integrand
from core import DIVISIBILITY_RTOL, path_mean, path_stats
from errors import (
    EnsembleMismatch,
    GridMismatch,
    InsufficientEpsilons,
    SpikeOutOfRange,
)
from sdde import (
    ControlProcess,
    EvalPoint,
    StatePaths,
    coefficient_table,
    path_costs,
    simulate,
)

FIRST_ORDER = ("b_x", "b_xd", "sigma_x", "sigma_xd")
SECOND_ORDER = ("b_xx", "b_xdxd", "b_xxd", "sigma_xx", "sigma_xdxd", "sigma_xxd")
COST_PARTIALS = ("l_x", "l_xd", "l_xx", "l_xdxd", "l_xxd")
DELTA_NAMES = ("b", "sigma", "l", "sigma_x", "sigma_xd")
MOMENT_COLUMNS = ("m1", "m2", "m3", "m4", "m5")
MIN_EPSILONS = 3
MIN_SPAN = 4.0
M1_SLOPE_BAND = (0.8, 1.2)
M4_SLOPE_FLOOR = 1.3
ORDER_SEPARATION = 0.3


@dataclass(frozen=True)
class SpikeSpec:
    """u^eps = replacement on [tau, tau + eps), the candidate elsewhere.
    ``replacement`` is a constant control value or a ControlProcess."""

    tau: float
    eps: float
    replacement: object

    def steps(self, grid):
        """(first node, number of nodes) of the spike support"""
        try:
            first = grid.index_of(self.tau)
        except ValueError as e:
            raise SpikeOutOfRange(f"tau={self.tau} is not a grid node") from e
        ratio = self.eps / grid.h
        k = int(round(ratio))
        if self.eps < 0 or abs(ratio - k) > DIVISIBILITY_RTOL * max(1.0, ratio):
            raise SpikeOutOfRange(
                f"eps={self.eps} is not a non-negative multiple of h={grid.h!r}"
            )
        if first < 0 or first + k > grid.n_steps:
            raise SpikeOutOfRange(
                f"[{self.tau}, {self.tau + self.eps}] leaves [0, {grid.T}]"
            )
        return first, k

    def validate(self, grid, control_set=None):
        first, k = self.steps(grid)
        if control_set is not None and k:
            values = self.replacement_values(grid, first, k)
            if not control_set.admits(values):
                raise SpikeOutOfRange(
                    f"replacement leaves U={control_set.name} on the spike"
                )
        return first, k

    def replacement_values(self, grid, first, k):
        if isinstance(self.replacement, ControlProcess):
            cols = slice(grid.col(first), grid.col(first + k))
            return self.replacement.values[:, cols]
        return np.full(k, float(self.replacement))

    @property
    def label(self):
        if isinstance(self.replacement, ControlProcess):
            target = self.replacement.label
        else:
            target = f"v={float(self.replacement)!r}"
        return f"spike[{self.tau!r},+{self.eps!r}] {target}"


def spike(base, s, control_set=None):
    grid = base.grid
    first, k = s.validate(grid, control_set)
    if k == 0:
        return base
    cols = slice(grid.col(first), grid.col(first + k))
    replacement = s.replacement_values(grid, first, k)
    per_path = not base.deterministic
    if isinstance(s.replacement, ControlProcess):
        if s.replacement.grid != grid:
            raise GridMismatch("spike replacement was built on another grid")
        per_path = per_path or not s.replacement.deterministic
    if per_path:
        values = np.array(base.values)
        values[:, cols] = replacement
        values.setflags(write=False)
    else:
        row = np.array(base.values[0])
        row[cols] = replacement if np.ndim(replacement) == 1 else replacement[0]
        values = np.broadcast_to(row, base.values.shape)
    return ControlProcess(grid=grid, values=values, label=f"{base.label} {s.label}")


@dataclass(frozen=True)
class VariationPaths:
    grid: object
    x1: np.ndarray
    x2: np.ndarray
    x: np.ndarray
    x_eps: np.ndarray
    spike: SpikeSpec
    control: ControlProcess = field(repr=False)

    def xi(self):
        """x^eps - x - x1"""
        return self.x_eps - self.x - self.x1

    def eta(self):
        """x^eps - x - x1 - x2"""
        return self.xi() - self.x2


def _perturbed_theta(pair, control, i):
    g = pair.grid
    return EvalPoint(
        t=g.time_of(i),
        x=pair.paths.at(i),
        xd=pair.paths.delayed(i),
        u=control.at(i),
        ud=control.at(i - g.m),
    )


def delta_table(pair, control, names=DELTA_NAMES):
    """f(t, x, x_delta, u^eps, u^eps_delta) - f(Theta) on every node of [0, T)"""
    problem = pair.problem
    out = {name: np.zeros((pair.n_paths, pair.grid.n_steps)) for name in names}
    for i in range(pair.grid.n_steps):
        theta = pair.theta(i)
        moved = _perturbed_theta(pair, control, i)
        for name in names:
            out[name][:, i] = problem.coefficient(name, moved) - problem.coefficient(
                name, theta
            )
    return out


def _check_inputs(pair, grid, ens):
    pair.check_grid(grid)
    ens.check_grid(grid)
    if pair.n_paths != ens.n_paths:
        raise EnsembleMismatch(
            f"pair has {pair.n_paths} paths, ensemble {ens.n_paths}"
        )


def simulate_variational(problem, pair, s, grid, ens, workers=1):
    """Euler scheme for x1 and x2 driven by the pair's own Brownian
    increments, plus the perturbed state x^eps on the same ensemble"""
    _check_inputs(pair, grid, ens)
    control = spike(pair.control, s, problem.control_set)
    m, h, N = grid.m, grid.h, grid.n_steps
    c = coefficient_table(pair, FIRST_ORDER + SECOND_ORDER)
    d = delta_table(pair, control)

    x1 = np.zeros((pair.n_paths, grid.n_state_nodes))
    x2 = np.zeros_like(x1)
    for i in range(N):
        col = grid.col(i)
        dB = ens.dB(i)
        a, ad = x1[:, col], x1[:, col - m]
        b, bd = x2[:, col], x2[:, col - m]
        square, square_d, cross = a * a, ad * ad, a * ad

        drift1 = c["b_x"][:, i] * a + c["b_xd"][:, i] * ad + d["b"][:, i]
        diff1 = c["sigma_x"][:, i] * a + c["sigma_xd"][:, i] * ad + d["sigma"][:, i]
        drift2 = (
            c["b_x"][:, i] * b
            + c["b_xd"][:, i] * bd
            + 0.5 * c["b_xx"][:, i] * square
            + 0.5 * c["b_xdxd"][:, i] * square_d
            + c["b_xxd"][:, i] * cross
        )
        diff2 = (
            c["sigma_x"][:, i] * b
            + c["sigma_xd"][:, i] * bd
            + 0.5 * c["sigma_xx"][:, i] * square
            + 0.5 * c["sigma_xdxd"][:, i] * square_d
            + c["sigma_xxd"][:, i] * cross
            + d["sigma_x"][:, i] * a
            + d["sigma_xd"][:, i] * ad
        )
        x1[:, col + 1] = a + drift1 * h + diff1 * dB
        x2[:, col + 1] = b + drift2 * h + diff2 * dB

    perturbed = simulate(problem, control, pair.init, grid, ens, workers)
    for array in (x1, x2):
        array.setflags(write=False)
    return VariationPaths(
        grid=grid,
        x1=x1,
        x2=x2,
        x=pair.paths.x,
        x_eps=perturbed.x,
        spike=s,
        control=control,
    )


def _sup(array, grid):
    return np.max(np.abs(array[:, grid.m :]), axis=1)


def moments(variation, p=1):
    """m1..m5 of the order estimates for one epsilon"""
    g = variation.grid
    xi = variation.xi()
    return {
        "m1": path_mean(_sup(variation.x_eps - variation.x, g) ** (2 * p)),
        "m2": path_mean(_sup(variation.x1, g) ** (2 * p)),
        "m3": path_mean(_sup(variation.x2, g) ** p),
        "m4": path_mean(_sup(xi, g) ** (2 * p)),
        "m5": path_mean(_sup(xi - variation.x2, g) ** p),
    }


def log_slope(eps, values):
    """OLS slope of log(value) against log(eps); nan when a value is not positive"""
    values = np.asarray(values, dtype=float)
    if np.any(values <= 0) or not np.all(np.isfinite(values)):
        return float("nan")
    return float(np.polyfit(np.log(eps), np.log(values), 1)[0])


def check_eps_list(eps_list, grid):
    eps = sorted(float(e) for e in eps_list)
    if len(eps) < MIN_EPSILONS:
        raise InsufficientEpsilons(
            f"need at least {MIN_EPSILONS} epsilons, got {len(eps)}"
        )
    if eps[0] <= 0 or eps[-1] / eps[0] < MIN_SPAN:
        raise InsufficientEpsilons(
            f"epsilons must be positive and span a factor {MIN_SPAN:g}, "
            f"got [{eps[0]}, {eps[-1]}]"
        )
    return eps


def order_study(problem, pair, family, eps_list, grid, ens, workers=1, p=1):
    """Moments m1..m5 for each epsilon and their fitted log-log slopes.

    ``family(eps)`` returns the SpikeSpec for one epsilon. Every epsilon
    reuses the pair's ensemble so the sweep is coupled through common noise."""
    eps = check_eps_list(eps_list, grid)
    _check_inputs(pair, grid, ens)

    def one(e):
        variation = simulate_variational(problem, pair, family(e), grid, ens)
        return {"eps": e, **moments(variation, p)}

    workers = max(1, int(workers or 1))
    if workers == 1:
        rows = [one(e) for e in eps]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(one, eps))

    slopes = {
        name: log_slope(eps, [row[name] for row in rows]) for name in MOMENT_COLUMNS
    }
    return {"rows": rows, "slopes": slopes, "p": p}


def order_checks(slopes, p=1):
    """Fitted slopes against the bands for moment exponent p; nan never passes"""
    lo, hi = M1_SLOPE_BAND
    return {
        "m1_band": bool(lo * p <= slopes["m1"] <= hi * p),
        "m4_floor": bool(slopes["m4"] >= M4_SLOPE_FLOOR * p),
        "separation": bool(slopes["m4"] - slopes["m1"] >= ORDER_SEPARATION * p),
    }


def _stats(per_path):
    estimate, stderr = path_stats(per_path)
    return {"estimate": estimate, "stderr": stderr}


def _adjoint_columns(adjoints, grid):
    if adjoints.grid != grid:
        raise GridMismatch("adjoints were solved on another grid")
    return adjoints.p, adjoints.q, adjoints.P, adjoints.Q


def _first_order_cost(pair, variation, d):
    """Per-path bracket of the first variational inequality"""
    problem, g = pair.problem, pair.grid
    c = coefficient_table(pair, COST_PARTIALS)
    total = np.zeros(pair.n_paths)
    for i in range(g.n_steps):
        col, back = g.col(i), g.col(i - g.m)
        a, ad = variation.x1[:, col], variation.x1[:, back]
        b, bd = variation.x2[:, col], variation.x2[:, back]
        total += g.h * (
            d["l"][:, i]
            + c["l_x"][:, i] * (a + b)
            + c["l_xd"][:, i] * (ad + bd)
            + 0.5 * c["l_xx"][:, i] * a * a
            + 0.5 * c["l_xdxd"][:, i] * ad * ad
            + c["l_xxd"][:, i] * a * ad
        )
    x_terminal = pair.paths.terminal()
    a_T = variation.x1[:, g.col(g.n_steps)]
    b_T = variation.x2[:, g.col(g.n_steps)]
    total += problem.terminal("h_x", x_terminal) * (a_T + b_T)
    total += 0.5 * problem.terminal("h_xx", x_terminal) * a_T * a_T
    return total


def _reduced_cost(pair, adjoints, d):
    g = pair.grid
    p, q, P, _ = _adjoint_columns(adjoints, g)
    total = np.zeros(pair.n_paths)
    for i in range(g.n_steps):
        total += g.h * (
            d["l"][:, i]
            + p[:, i] * d["b"][:, i]
            + q[:, i] * d["sigma"][:, i]
            + 0.5 * P[:, i] * d["sigma"][:, i] ** 2
        )
    return total


def _correction_terms(pair, adjoints, variation, d):
    """Per-path integrals separating the intermediate inequality from the
    reduced one"""
    g = pair.grid
    p, q, P, Q = _adjoint_columns(adjoints, g)
    c = coefficient_table(pair, ("sigma_x", "sigma_xd") + BRDE_NAMES)
    delayed = np.zeros(pair.n_paths)
    state = np.zeros(pair.n_paths)
    cross = np.zeros(pair.n_paths)
    for i in range(g.n_steps):
        a = variation.x1[:, g.col(i)]
        ad = variation.x1[:, g.col(i - g.m)]
        db, ds = d["b"][:, i], d["sigma"][:, i]
        delayed += g.h * ad * (
            q[:, i] * d["sigma_xd"][:, i] + P[:, i] * c["sigma_xd"][:, i] * ds
        )
        state += g.h * a * (
            q[:, i] * d["sigma_x"][:, i]
            + P[:, i] * db
            + P[:, i] * c["sigma_x"][:, i] * ds
            + Q[:, i] * ds
        )
        cross += g.h * a * ad * brde_integrand(c, p, q, P, Q, i)
    return {"delayed": delayed, "state": state, "cross": cross}


def reduced_terms(pair, adjoints, variation):
    """Estimates of the x1(t - delta), x1(t) and x1(t) x1(t - delta) terms
    dropped on the way to the reduced inequality, and the intermediate
    bracket that still contains them"""
    d = delta_table(pair, variation.control)
    terms = _correction_terms(pair, adjoints, variation, d)
    intermediate = _reduced_cost(pair, adjoints, d) + sum(terms.values())
    out = {name: _stats(values) for name, values in terms.items()}
    out["intermediate"] = _stats(intermediate)
    return out


def variational_gap(problem, pair, s, adjoints, grid, ens, workers=1, variation=None):
    """lhs16: first variational inequality bracket; lhs25: its reduced
    Hamiltonian form; cost_gap: J(u^eps) - J(u) on common random numbers"""
    _check_inputs(pair, grid, ens)
    _adjoint_columns(adjoints, grid)
    if variation is None:
        variation = simulate_variational(problem, pair, s, grid, ens, workers)
    elif variation.grid != grid:
        raise GridMismatch("variation paths were simulated on another grid")

    d = delta_table(pair, variation.control)
    lhs16 = _first_order_cost(pair, variation, d)
    lhs25 = _reduced_cost(pair, adjoints, d)

    perturbed = StatePaths(grid=grid, x=variation.x_eps, provenance={})
    gap = path_costs(problem, perturbed, variation.control) - path_costs(
        problem, pair.paths, pair.control
    )
    return {
        "spike": s.label,
        "lhs16": _stats(lhs16),
        "lhs25": _stats(lhs25),
        "cost_gap": _stats(gap),
    }
