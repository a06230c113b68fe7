#!/usr/bin/env python3
"""
Adjoint equations of the delayed maximum principle for a candidate pair:
the first- and second-order anticipated BSDEs for (p, q) and (P, Q), and the
backward random differential equation for K.
"""
from dataclasses import dataclass

import numpy as np

from absde import AbsdeSpec, RegressionBasis, solve_absde, zero_extension
from core import node_means, path_stats
from errors import GridMismatch
from sdde import coefficient_table

FIRST_NAMES = ("b_x", "sigma_x", "l_x", "b_xd", "sigma_xd", "l_xd")
SECOND_NAMES = (
    "b_x",
    "sigma_x",
    "b_xx",
    "sigma_xx",
    "l_xx",
    "sigma_xd",
    "b_xdxd",
    "sigma_xdxd",
    "l_xdxd",
)
BRDE_NAMES = ("b_xd", "sigma_x", "sigma_xd", "b_xxd", "sigma_xxd", "l_xxd")

NOT_ASSERTED = (
    "K does not vanish: the maximum condition is not asserted for this pair"
)


@dataclass(frozen=True)
class AdjointBundle:
    """(p, q), (P, Q) and K on the nodes of [0, T + delta], one row per path"""

    grid: object
    p: np.ndarray
    q: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    K: np.ndarray
    source: str = "solved"

    def node_summary(self):
        """Cross-path means for the adjoints CSV"""
        times = self.grid.backward_times()
        columns = {
            name: node_means(getattr(self, name)) for name in ("p", "q", "P", "Q", "K")
        }
        return [
            {"t": float(t), **{f"mean_{k}": float(v[i]) for k, v in columns.items()}}
            for i, t in enumerate(times)
        ]


def _check_pair(pair):
    if pair.control.grid != pair.paths.grid:
        raise GridMismatch("control and state of the pair live on different grids")


def _values(solution):
    """(Y, Z) arrays from an AbsdeSolution or a plain pair"""
    if hasattr(solution, "y"):
        return solution.y, solution.z
    return solution


def _terminal(problem, name):
    def terminal(k, x_terminal):
        if k == 0:
            return np.array(problem.terminal(name, x_terminal), dtype=float)
        return np.zeros_like(x_terminal)

    return terminal


def build_first_adjoint(problem, pair):
    """-dp = {b_x p + sigma_x q + l_x
              + E^{F_t}[b_xd p + sigma_xd q + l_xd](t + delta)} dt - q dB"""
    _check_pair(pair)
    N = pair.grid.n_steps
    c = coefficient_table(pair, FIRST_NAMES)

    def generator(t, y, z, a, b, state):
        i = state.i
        return c["b_x"][:, i] * y + c["sigma_x"][:, i] * z + c["l_x"][:, i] + a

    def advance(j, y, z):
        zeros = np.zeros_like(y)
        if j > N:
            return zeros, zeros
        ahead = c["b_xd"][:, j] * y + c["sigma_xd"][:, j] * z + c["l_xd"][:, j]
        return ahead, zeros

    return AbsdeSpec(
        name="first adjoint",
        generator=generator,
        terminal=_terminal(problem, "h_x"),
        terminal_z=zero_extension,
        advance=advance,
    )


def build_second_adjoint(problem, pair, first):
    _check_pair(pair)
    N = pair.grid.n_steps
    p, q = _values(first)
    if p.shape[1] != pair.grid.n_backward_nodes:
        raise GridMismatch("first adjoint was solved on another grid")
    c = coefficient_table(pair, SECOND_NAMES)

    def generator(t, y, z, a, b, state):
        i = state.i
        b_x, s_x = c["b_x"][:, i], c["sigma_x"][:, i]
        return (
            (2 * b_x + s_x**2) * y
            + 2 * s_x * z
            + c["b_xx"][:, i] * p[:, i]
            + c["sigma_xx"][:, i] * q[:, i]
            + c["l_xx"][:, i]
            + a
        )

    def advance(j, y, z):
        zeros = np.zeros_like(y)
        if j > N:
            return zeros, zeros
        ahead = (
            c["sigma_xd"][:, j] ** 2 * y
            + c["b_xdxd"][:, j] * p[:, j]
            + c["sigma_xdxd"][:, j] * q[:, j]
            + c["l_xdxd"][:, j]
        )
        return ahead, zeros

    return AbsdeSpec(
        name="second adjoint",
        generator=generator,
        terminal=_terminal(problem, "h_xx"),
        terminal_z=zero_extension,
        advance=advance,
    )


def brde_integrand(c, p, q, P, Q, i):
    """b_xd P + sigma_x sigma_xd P + sigma_xd Q + b_xxd p + sigma_xxd q + l_xxd"""
    return (
        c["b_xd"][:, i] * P[:, i]
        + c["sigma_x"][:, i] * c["sigma_xd"][:, i] * P[:, i]
        + c["sigma_xd"][:, i] * Q[:, i]
        + c["b_xxd"][:, i] * p[:, i]
        + c["sigma_xxd"][:, i] * q[:, i]
        + c["l_xxd"][:, i]
    )


def solve_brde(problem, pair, first, second, grid):
    """Left-endpoint backward quadrature per path, K = 0 on [T, T + delta]"""
    _check_pair(pair)
    pair.check_grid(grid)
    p, q = _values(first)
    P, Q = _values(second)
    c = coefficient_table(pair, BRDE_NAMES)
    K = np.zeros((pair.n_paths, grid.n_backward_nodes))
    for i in reversed(range(grid.n_steps)):
        K[:, i] = K[:, i + 1] + grid.h * brde_integrand(c, p, q, P, Q, i)
    return K


def solve_adjoints(problem, pair, ens, basis=None):
    basis = basis or RegressionBasis()
    grid = pair.grid
    first = solve_absde(
        build_first_adjoint(problem, pair), grid, pair.paths, ens, basis
    )
    second = solve_absde(
        build_second_adjoint(problem, pair, first), grid, pair.paths, ens, basis
    )
    K = solve_brde(problem, pair, first, second, grid)
    return AdjointBundle(grid=grid, p=first.y, q=first.z, P=second.y, Q=second.z, K=K)


def check_k_vanishes(K, tol):
    """Hypothesis gate of the maximum condition: sup_t E|K(t)| < tol"""
    if isinstance(K, AdjointBundle):
        K = K.K[:, : K.grid.n_steps + 1]
    sup = float(np.max(node_means(np.abs(K))))
    passed = sup < tol
    return {
        "sup_mean_abs_K": sup,
        "tol": tol,
        "pass": passed,
        "note": (
            "maximum condition asserted (K vanishes)" if passed else NOT_ASSERTED
        ),
    }


def cross_term_identity(problem, pair, adjoints, variation, k_report):
    """E int_0^T x1(t) x1(t - delta) [BRDE integrand] dt, expected to be zero
    only when K vanishes"""
    g = pair.grid
    c = coefficient_table(pair, BRDE_NAMES)
    a = adjoints
    per_path = np.zeros(pair.n_paths)
    for i in range(g.n_steps):
        x1 = variation.x1[:, g.col(i)]
        x1d = variation.x1[:, g.col(i - g.m)]
        per_path += g.h * x1 * x1d * brde_integrand(c, a.p, a.q, a.P, a.Q, i)
    estimate, stderr = path_stats(per_path)
    asserted = bool(k_report["pass"])
    return {
        "estimate": estimate,
        "stderr": stderr,
        "asserted": asserted,
        "label": "asserted" if asserted else "not asserted",
        "within_3se": abs(estimate) <= 3 * stderr,
    }
