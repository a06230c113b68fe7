#!/usr/bin/env python3
"""
Controlled stochastic delay differential equations

    dX(t) = b(t, X(t), X(t-delta), v(t), v(t-delta)) dt
          + sigma(t, X(t), X(t-delta), v(t), v(t-delta)) dB(t),
    X = phi and v = eta on [-delta, 0],

simulated with the explicit Euler-Maruyama scheme on a delay-aligned grid,
plus the moment and cost estimators built on the simulated paths.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from core import map_path_chunks, path_mean, path_stats
from errors import (
    EnsembleMismatch,
    GridMismatch,
    InadmissibleControl,
    NonFiniteState,
)

FIRST_PARTIALS = (
    ("b", "b_x", "x"),
    ("b", "b_xd", "xd"),
    ("sigma", "sigma_x", "x"),
    ("sigma", "sigma_xd", "xd"),
    ("l", "l_x", "x"),
    ("l", "l_xd", "xd"),
)

SECOND_PARTIALS = (
    ("b_x", "b_xx", "x"),
    ("b_xd", "b_xdxd", "xd"),
    ("b_x", "b_xxd", "xd"),
    ("sigma_x", "sigma_xx", "x"),
    ("sigma_xd", "sigma_xdxd", "xd"),
    ("sigma_x", "sigma_xxd", "xd"),
    ("l_x", "l_xx", "x"),
    ("l_xd", "l_xdxd", "xd"),
    ("l_x", "l_xxd", "xd"),
)


def zero_coefficient(t, x, xd, v, vd):
    return 0.0


def zero_terminal(x):
    return 0.0


def as_paths(value, like):
    """Broadcast a coefficient value to the per-path shape of ``like``"""
    return np.broadcast_to(np.asarray(value, dtype=float), np.shape(like))


@dataclass(frozen=True)
class ControlSet:
    name: str
    contains: Callable
    sampler: Callable
    boundary: tuple = ()

    def admits(self, values):
        return bool(np.all(self.contains(np.asarray(values, dtype=float))))

    def sample(self, rng, n):
        return self.sampler(rng, n)


def split_rays(a=1.0):
    """(-inf, -a] U [a, inf)"""

    def sampler(rng, n):
        signs = np.where(rng.random(n) < 0.5, -1.0, 1.0)
        return signs * (a + rng.exponential(1.0, n))

    return ControlSet(
        name=f"(-inf,-{a}]U[{a},inf)",
        contains=lambda v: np.abs(v) >= a,
        sampler=sampler,
        boundary=(-float(a), float(a)),
    )


def finite_set(points):
    points = tuple(float(p) for p in points)
    return ControlSet(
        name="{" + ",".join(repr(p) for p in points) + "}",
        contains=lambda v: np.isin(v, points),
        sampler=lambda rng, n: rng.choice(np.array(points), n),
        boundary=points,
    )


def whole_line():
    return ControlSet(
        name="R",
        contains=np.isfinite,
        sampler=lambda rng, n: rng.standard_normal(n),
    )


@dataclass(frozen=True)
class DelayProblem:
    """Coefficients of the controlled system and cost with their (x, x_delta)
    partials. Every function takes (t, x, x_delta, v, v_delta) and must work
    elementwise on numpy arrays; h_term and its partials take x only."""

    name: str
    b: Callable = zero_coefficient
    sigma: Callable = zero_coefficient
    l: Callable = zero_coefficient  # noqa: E741
    h_term: Callable = zero_terminal
    b_x: Callable = zero_coefficient
    b_xd: Callable = zero_coefficient
    b_xx: Callable = zero_coefficient
    b_xdxd: Callable = zero_coefficient
    b_xxd: Callable = zero_coefficient
    sigma_x: Callable = zero_coefficient
    sigma_xd: Callable = zero_coefficient
    sigma_xx: Callable = zero_coefficient
    sigma_xdxd: Callable = zero_coefficient
    sigma_xxd: Callable = zero_coefficient
    l_x: Callable = zero_coefficient
    l_xd: Callable = zero_coefficient
    l_xx: Callable = zero_coefficient
    l_xdxd: Callable = zero_coefficient
    l_xxd: Callable = zero_coefficient
    h_x: Callable = zero_terminal
    h_xx: Callable = zero_terminal
    control_set: ControlSet = field(default_factory=whole_line)

    @classmethod
    def uncontrolled(cls, name, drift, diffusion, **partials):
        """SDDE without control: drift(t, x, xd) and diffusion(t, x, xd)"""
        return cls(
            name=name,
            b=lambda t, x, xd, v, vd: drift(t, x, xd),
            sigma=lambda t, x, xd, v, vd: diffusion(t, x, xd),
            **partials,
        )

    def coefficient(self, name, theta):
        """Evaluate a coefficient at an evaluation point, one value per path"""
        fn = getattr(self, name)
        value = fn(theta.t, theta.x, theta.xd, theta.u, theta.ud)
        return as_paths(value, theta.x)

    def terminal(self, name, x):
        return as_paths(getattr(self, name)(x), x)


@dataclass(frozen=True)
class InitialData:
    phi: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        if not np.all(np.isfinite(self.phi)):
            raise ValueError("initial state path phi has non-finite node values")
        if not np.all(np.isfinite(self.eta)):
            raise ValueError("initial control path eta has non-finite node values")

    @classmethod
    def from_functions(cls, grid, phi, eta):
        """Evaluate closed-form initial data on the nodes of [-delta, 0]"""
        theta = np.arange(-grid.m, 1) * grid.h
        phi_nodes = np.asarray([phi(t) for t in theta], dtype=float)
        eta_nodes = np.asarray([eta(t) for t in theta[:-1]], dtype=float)
        return cls(phi=phi_nodes, eta=eta_nodes)

    @classmethod
    def constant(cls, grid, x0, v0):
        return cls(phi=np.full(grid.m + 1, float(x0)), eta=np.full(grid.m, float(v0)))

    def check_grid(self, grid):
        if len(self.phi) != grid.m + 1 or len(self.eta) != grid.m:
            raise GridMismatch(
                f"initial data has {len(self.phi)} state and {len(self.eta)} "
                f"control nodes, grid needs {grid.m + 1} and {grid.m}"
            )


@dataclass(frozen=True)
class ControlProcess:
    grid: object
    values: np.ndarray
    label: str = "control"
    adapted: str = None

    def __post_init__(self):
        # the tag always follows the data: distinct rows mean a per-path control
        same = bool(np.all(self.values == self.values[:1]))
        object.__setattr__(self, "adapted", "deterministic" if same else "adapted")

    @property
    def n_paths(self):
        return self.values.shape[0]

    @property
    def deterministic(self):
        return self.adapted == "deterministic"

    @classmethod
    def from_nodes(cls, grid, n_paths, nodes, eta, label="control"):
        """Deterministic control from node values on [0, T] and eta on [-delta, 0)"""
        nodes = np.asarray(nodes, dtype=float)
        if nodes.shape != (grid.n_steps + 1,):
            raise GridMismatch(
                f"expected {grid.n_steps + 1} node values, got {nodes.shape}"
            )
        row = np.concatenate([np.asarray(eta, dtype=float), nodes])
        values = np.broadcast_to(row, (n_paths, grid.n_state_nodes))
        return cls(grid=grid, values=values, label=label)

    @classmethod
    def constant(cls, grid, n_paths, value, eta, label=None):
        nodes = np.full(grid.n_steps + 1, float(value))
        return cls.from_nodes(grid, n_paths, nodes, eta, label or f"v={value}")

    @classmethod
    def from_function(cls, grid, n_paths, fn, eta, label="control"):
        nodes = [fn(t) for t in np.arange(grid.n_steps + 1) * grid.h]
        return cls.from_nodes(grid, n_paths, nodes, eta, label)

    def at(self, i):
        return self.values[:, self.grid.col(i)]

    def check_admissible(self, control_set, error=InadmissibleControl):
        if not control_set.admits(self.values):
            bad = np.argwhere(~control_set.contains(self.values))[0]
            raise error(
                f"{self.label} leaves U={control_set.name} on path {bad[0]} "
                f"at t={self.grid.time_of(bad[1] - self.grid.m)!r}"
            )


@dataclass(frozen=True)
class StatePaths:
    grid: object
    x: np.ndarray
    provenance: dict

    @property
    def n_paths(self):
        return self.x.shape[0]

    def at(self, i):
        return self.x[:, self.grid.col(i)]

    def delayed(self, i):
        return self.x[:, self.grid.col(i - self.grid.m)]

    def terminal(self):
        return self.at(self.grid.n_steps)

    def on_horizon(self):
        """Nodes of [0, T]"""
        return self.x[:, self.grid.m :]


@dataclass(frozen=True)
class EvalPoint:
    t: float
    x: np.ndarray
    xd: np.ndarray
    u: np.ndarray
    ud: np.ndarray


@dataclass(frozen=True)
class OptimalPair:
    """Candidate control with its state, on one ensemble"""

    problem: DelayProblem
    paths: StatePaths
    control: ControlProcess
    init: InitialData

    @property
    def grid(self):
        return self.paths.grid

    @property
    def n_paths(self):
        return self.paths.n_paths

    def theta(self, i):
        g = self.grid
        return EvalPoint(
            t=g.time_of(i),
            x=self.paths.at(i),
            xd=self.paths.delayed(i),
            u=self.control.at(i),
            ud=self.control.at(i - g.m),
        )

    def check_grid(self, grid):
        if grid != self.grid:
            raise GridMismatch(
                f"pair lives on [{self.grid.describe()}], "
                f"called with [{grid.describe()}]"
            )


def _check_inputs(control, init, grid, ens):
    ens.check_grid(grid)
    init.check_grid(grid)
    if control.grid != grid:
        raise GridMismatch(f"control {control.label} was built on another grid")
    if control.n_paths != ens.n_paths:
        raise EnsembleMismatch(
            f"control has {control.n_paths} paths, ensemble {ens.n_paths}"
        )
    eta_cols = control.values[:, : grid.m]
    if not np.array_equal(eta_cols, np.broadcast_to(init.eta, eta_cols.shape)):
        raise InadmissibleControl(
            f"{control.label} does not match the initial control path on [-delta, 0)"
        )


def simulate(problem, control, init, grid, ens, workers=1):
    """Euler-Maruyama with left-point coefficients; the delayed state is the
    stored value m columns back"""
    _check_inputs(control, init, grid, ens)
    m, h = grid.m, grid.h

    def run(paths):
        v = control.values[paths]
        dB = ens.increments[paths]
        x = np.empty((v.shape[0], grid.n_state_nodes))
        x[:, : m + 1] = init.phi
        for i in range(grid.n_steps):
            c = i + m
            t = i * h
            args = (t, x[:, c], x[:, c - m], v[:, c], v[:, c - m])
            drift = as_paths(problem.b(*args), x[:, c])
            diffusion = as_paths(problem.sigma(*args), x[:, c])
            x[:, c + 1] = x[:, c] + drift * h + diffusion * dB[:, c]
            finite = np.isfinite(x[:, c + 1])
            if not finite.all():
                raise NonFiniteState(paths.start + int(np.argmin(finite)), i)
        return x

    x = map_path_chunks(run, ens.n_paths, workers)
    x.setflags(write=False)
    return StatePaths(
        grid=grid,
        x=x,
        provenance={
            "problem": problem.name,
            "control": control.label,
            "seed": ens.seed,
        },
    )


def simulate_free(problem, init, grid, ens, workers=1):
    """Uncontrolled SDDE: the control is frozen at the initial control value"""
    eta0 = init.eta[-1] if len(init.eta) else 0.0
    control = ControlProcess.from_nodes(
        grid,
        ens.n_paths,
        np.full(grid.n_steps + 1, eta0),
        init.eta,
        label="uncontrolled",
    )
    return simulate(problem, control, init, grid, ens, workers)


def sup_moment(paths, p=2.0):
    """Monte Carlo E[sup_{0<=t<=T} |X(t)|^p] over grid nodes"""
    if p < 2:
        raise ValueError(f"moment order must be at least 2, got {p}")
    sup = np.max(np.abs(paths.on_horizon()), axis=1)
    return path_mean(sup**p)


def path_costs(problem, paths, control):
    """Per-path sum_i l(t_i, Theta_i) h + h(X(T))"""
    g = paths.grid
    total = np.zeros(paths.n_paths)
    for i in range(g.n_steps):
        theta = EvalPoint(
            t=g.time_of(i),
            x=paths.at(i),
            xd=paths.delayed(i),
            u=control.at(i),
            ud=control.at(i - g.m),
        )
        total += problem.coefficient("l", theta) * g.h
    return total + problem.terminal("h_term", paths.terminal())


def evaluate_cost(problem, paths, control):
    estimate, stderr = path_stats(path_costs(problem, paths, control))
    return {"estimate": estimate, "stderr": stderr}


def _relative_error(approx, exact):
    return float(np.max(np.abs(approx - exact) / np.maximum(1.0, np.abs(exact))))


def check_partials(problem, seed=0, n_points=64, step=1e-5, rtol=1e-4, scale=1.0):
    """Compare every supplied partial with central differences of its parent
    at random points; relative error is measured against max(1, |partial|)"""
    rng = np.random.default_rng(seed)
    point = {
        "t": rng.random(n_points),
        "x": rng.normal(0.0, scale, n_points),
        "xd": rng.normal(0.0, scale, n_points),
        "v": problem.control_set.sample(rng, n_points),
        "vd": problem.control_set.sample(rng, n_points),
    }

    def call(name, **moved):
        args = {**point, **moved}
        fn = getattr(problem, name)
        value = fn(args["t"], args["x"], args["xd"], args["v"], args["vd"])
        return as_paths(value, point["x"])

    errors = {}
    for parent, partial, wrt in FIRST_PARTIALS + SECOND_PARTIALS:
        up = call(parent, **{wrt: point[wrt] + step})
        down = call(parent, **{wrt: point[wrt] - step})
        exact = call(partial)
        diff = (up - down) / (2 * step)
        errors[partial] = _relative_error(diff, exact)

    for parent, partial in (("h_term", "h_x"), ("h_x", "h_xx")):
        x = point["x"]
        up = problem.terminal(parent, x + step)
        diff = (up - problem.terminal(parent, x - step)) / (2 * step)
        exact = problem.terminal(partial, x)
        errors[partial] = _relative_error(diff, exact)

    return {"errors": errors, "pass": all(e < rtol for e in errors.values())}


def coefficient_table(pair, names):
    """Coefficients at Theta(t_j) for every node j of [0, T]: name -> (paths, N+1)"""
    g = pair.grid
    points = [pair.theta(j) for j in range(g.n_steps + 1)]
    return {
        name: np.column_stack([pair.problem.coefficient(name, th) for th in points])
        for name in names
    }
