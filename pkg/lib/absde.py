#!/usr/bin/env python3
"""
Regression Monte Carlo for anticipated BSDEs with a constant delay

    -dY(t) = f(t, Y(t), Z(t), E^{F_t}[Y(t+delta)], E^{F_t}[Z(t+delta)]) dt
             - Z(t) dB(t),                               t in [0, T],
     Y(t) = mu(t),  Z(t) = nu(t),                        t in [T, T+delta].

Conditional expectations given F_{t_i} are least-squares projections on
polynomials in (X(t_i), X(t_i - delta)) of a forward state simulated on the
same ensemble.
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from core import basis_size, path_mean
from errors import EnsembleMismatch, GridMismatch, IllConditionedRegression


def zero_extension(k, x_terminal):
    return np.zeros_like(x_terminal)


def identity_advance(j, y, z):
    return y, z


@dataclass(frozen=True)
class NodeState:
    """Forward state visible to a generator at node i"""

    i: int
    t: float
    x: np.ndarray
    xd: np.ndarray


@dataclass(frozen=True)
class AbsdeSpec:
    """Generator f(t, y, z, a, b, state) with a, b the conditional
    expectations of ``advance(i + m, y, z)``. The default advance hands back
    (Y(t+delta), Z(t+delta)); adjoint equations replace it so that products
    with future coefficients are conditioned as a whole.

    ``terminal(k, x_T)`` and ``terminal_z(k, x_T)`` give mu and nu at the
    node k steps past T, k = 0..m."""

    name: str
    generator: Callable
    terminal: Callable = zero_extension
    terminal_z: Callable = zero_extension
    advance: Callable = identity_advance


@dataclass(frozen=True)
class RegressionBasis:
    degree: int = 2
    ridge: float = 1e-8
    cond_limit: float = 1e10
    ridge_enabled: bool = True

    @property
    def size(self):
        return basis_size(self.degree)

    def exponents(self):
        """(power of x, power of x_delta): 1, x, x_d, x^2, x x_d, x_d^2, ..."""
        return [(a, k - a) for k in range(self.degree + 1) for a in range(k, -1, -1)]

    def projector(self, x, xd):
        return Projector(self, x, xd)


def _standardize(values):
    mean = values.mean()
    sd = values.std()
    if sd <= 1e-12 * max(1.0, abs(mean)):
        return None
    return (values - mean) / sd


class Projector:
    """Least-squares projection on the basis evaluated at one node.

    A regressor whose values do not vary across paths carries no
    information beyond the constant, so its monomials are left out."""

    def __init__(self, basis, x, xd):
        zx, zd = _standardize(x), _standardize(xd)
        columns = []
        kept = []
        for a, b in basis.exponents():
            if (a and zx is None) or (b and zd is None):
                continue
            column = np.ones_like(x, dtype=float)
            if a:
                column = column * zx**a
            if b:
                column = column * zd**b
            columns.append(column)
            kept.append((a, b))
        self.design = np.column_stack(columns)
        self.regressors = kept
        self.condition = (
            float(np.linalg.cond(self.design)) if len(kept) > 1 else 1.0
        )
        self.ridged = False
        if self.condition > basis.cond_limit:
            if not basis.ridge_enabled:
                raise IllConditionedRegression(
                    f"design condition {self.condition:.3g} exceeds "
                    f"{basis.cond_limit:.3g} and ridge is disabled"
                )
            self.ridged = True
            gram = self.design.T @ self.design
            self._penalty = basis.ridge * np.mean(np.diag(gram)) * np.eye(len(kept))
            self._gram = gram

    def coefficients(self, targets):
        if self.ridged:
            return np.linalg.solve(self._gram + self._penalty, self.design.T @ targets)
        return np.linalg.lstsq(self.design, targets, rcond=None)[0]

    def __call__(self, *targets):
        stacked = np.column_stack([np.asarray(t, dtype=float) for t in targets])
        fitted = self.design @ self.coefficients(stacked)
        return tuple(fitted[:, k] for k in range(len(targets)))


@dataclass(frozen=True)
class AbsdeSolution:
    grid: object
    y: np.ndarray
    z: np.ndarray
    generator_values: np.ndarray
    forward: object
    basis: RegressionBasis
    diagnostics: dict

    @property
    def n_paths(self):
        return self.y.shape[0]


def _check_inputs(grid, forward, ens, basis):
    ens.check_grid(grid)
    if forward.grid != grid:
        raise GridMismatch("forward paths and solver grid differ")
    if forward.n_paths != ens.n_paths:
        raise EnsembleMismatch(
            f"forward paths ({forward.n_paths}) and ensemble ({ens.n_paths}) "
            "differ in size"
        )
    if ens.n_paths < 2 * basis.size:
        raise EnsembleMismatch(
            f"{ens.n_paths} paths is below twice the basis size {basis.size}"
        )


def _node_fit(spec, grid, forward, ens, basis, y, z, i):
    """Projector, regressed y_{i+1}, z_i and anticipated terms at node i"""
    m, h = grid.m, grid.h
    x_i, xd_i = forward.at(i), forward.delayed(i)
    proj = basis.projector(x_i, xd_i)
    ahead_y, ahead_z = spec.advance(i + m, y[:, i + m], z[:, i + m])
    y_hat, a_i, b_i = proj(y[:, i + 1], ahead_y, ahead_z)
    (z_i,) = proj((y[:, i + 1] - y_hat) * ens.dB(i) / h)
    state = NodeState(i=i, t=grid.time_of(i), x=x_i, xd=xd_i)
    f = np.broadcast_to(
        np.asarray(spec.generator(state.t, y_hat, z_i, a_i, b_i, state), dtype=float),
        y_hat.shape,
    )
    return proj, z_i, f


def solve_absde(spec, grid, forward, ens, basis=None):
    """Backward sweep from T to 0, one explicit regression step per node.

    Z is the projection of (Y_{i+1} - E_i[Y_{i+1}]) dB_i / h, which has the
    same conditional expectation as Y_{i+1} dB_i / h with far less noise."""
    basis = basis or RegressionBasis()
    _check_inputs(grid, forward, ens, basis)
    n, N, m, h = ens.n_paths, grid.n_steps, grid.m, grid.h

    y = np.zeros((n, N + m + 1))
    z = np.zeros((n, N + m + 1))
    x_terminal = forward.terminal()
    for k in range(m + 1):
        y[:, N + k] = spec.terminal(k, x_terminal)
        z[:, N + k] = spec.terminal_z(k, x_terminal)

    generator_values = np.zeros((n, N))
    conditions = np.zeros(N)
    ridged = []
    for i in reversed(range(N)):
        proj, z_i, f = _node_fit(spec, grid, forward, ens, basis, y, z, i)
        (y[:, i],) = proj(y[:, i + 1] + f * h)
        z[:, i] = z_i
        generator_values[:, i] = f
        conditions[i] = proj.condition
        if proj.ridged:
            ridged.append(i)

    for array in (y, z, generator_values):
        array.setflags(write=False)
    return AbsdeSolution(
        grid=grid,
        y=y,
        z=z,
        generator_values=generator_values,
        forward=forward,
        basis=basis,
        diagnostics={
            "spec": spec.name,
            "degree": basis.degree,
            "regressors": basis.exponents(),
            "max_condition": float(conditions.max()) if N else 1.0,
            "ridge_nodes": ridged,
        },
    )


def martingale_profile(sol, spec, grid, ens):
    """Per-node mean square of the projected discrete-dynamics residual
    y_i - [y_{i+1} + f h - z_i dB_i]; zero past T"""
    if sol.grid != grid:
        raise GridMismatch("solution and grid differ")
    ens.check_grid(grid)
    h = grid.h
    profile = np.zeros(grid.n_steps + grid.m + 1)
    for i in range(grid.n_steps):
        proj, _, f = _node_fit(
            spec, grid, sol.forward, ens, sol.basis, sol.y, sol.z, i
        )
        target = sol.y[:, i + 1] + f * h - sol.z[:, i] * ens.dB(i)
        (fitted,) = proj(target)
        profile[i] = path_mean((fitted - sol.y[:, i]) ** 2)
    return profile


def martingale_residual(sol, spec, grid, ens):
    profile = martingale_profile(sol, spec, grid, ens)
    return float(np.mean(profile[: grid.n_steps]))


def generator_slopes(spec, forward, i=0, span=1.0, n_points=64, seed=0, step=1e-6):
    """Largest finite-difference slope of f in each of (y, z, a, b) over a
    box of half-width ``span`` at node i"""
    rng = np.random.default_rng(seed)
    x_i, xd_i = forward.at(i), forward.delayed(i)
    rows = rng.integers(0, len(x_i), n_points)
    state = NodeState(i=i, t=forward.grid.time_of(i), x=x_i[rows], xd=xd_i[rows])
    args = [rng.uniform(-span, span, n_points) for _ in range(4)]
    slopes = {}
    for k, name in enumerate(("y", "z", "a", "b")):
        up = list(args)
        up[k] = args[k] + step
        f0 = np.asarray(spec.generator(state.t, *args, state), dtype=float)
        f1 = np.asarray(spec.generator(state.t, *up, state), dtype=float)
        slopes[name] = float(np.max(np.abs(f1 - f0)) / step)
    return slopes
