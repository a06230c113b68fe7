#!/usr/bin/env python3
"""
Hamiltonian and the delayed maximum condition

    H(t, x, x_d, v, v_d, p, q, P) = l + p b + q sigma + 1/2 P sigma^2
                                    - P sigma(Theta(t)) sigma

The margin at (tau, v) is the expected gain in H from switching u(tau) to v,
plus the anticipated gain one delay later while tau lies in [0, T - delta).
"""
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from absde import RegressionBasis
from core import DEFAULT_TOLERANCES, path_stats
from errors import (
    EmptyGrid,
    GridError,
    GridMismatch,
    InadmissibleControl,
    KHypothesisNotVerified,
)
from sdde import EvalPoint, as_paths


@dataclass(frozen=True)
class HamiltonianInput:
    tau: float
    x: object
    xd: object
    v: object
    vd: object
    p: object
    q: object
    P: object
    anchor: EvalPoint


def hamiltonian(problem, inp):
    point = EvalPoint(t=inp.tau, x=inp.x, xd=inp.xd, u=inp.v, ud=inp.vd)
    l_ = problem.coefficient("l", point)
    b = problem.coefficient("b", point)
    sigma = problem.coefficient("sigma", point)
    sigma_anchor = problem.coefficient("sigma", inp.anchor)
    return (
        l_
        + inp.p * b
        + inp.q * sigma
        + 0.5 * inp.P * sigma**2
        - inp.P * sigma_anchor * sigma
    )


def _node(grid, tau):
    i = grid.index_of(tau)
    if i < 0 or i > grid.n_steps:
        raise GridError(f"tau={tau} lies outside [0, T]")
    return i


def _check(pair, adjoints, ens):
    if adjoints.grid != pair.grid:
        raise GridMismatch("adjoints were solved on another grid")
    if ens is not None:
        ens.check_grid(pair.grid)


def _gain(problem, pair, adjoints, j, v, vd, u, ud):
    """H at node j with controls (v, vd) minus H at (u, ud), per path"""
    anchor = pair.theta(j)
    common = dict(
        tau=anchor.t,
        x=anchor.x,
        xd=anchor.xd,
        p=adjoints.p[:, j],
        q=adjoints.q[:, j],
        P=adjoints.P[:, j],
        anchor=anchor,
    )
    moved = hamiltonian(problem, HamiltonianInput(v=v, vd=vd, **common))
    held = hamiltonian(problem, HamiltonianInput(v=u, vd=ud, **common))
    return as_paths(moved, anchor.x) - as_paths(held, anchor.x)


def _current_gain(problem, pair, adjoints, i, v):
    u, m = pair.control, pair.grid.m
    v = as_paths(v, pair.paths.at(i))
    return _gain(problem, pair, adjoints, i, v, u.at(i - m), u.at(i), u.at(i - m))


def margin_paths(problem, pair, adjoints, i, v, basis=None):
    """Per-path integrand of the margin at node i; the anticipated part is
    projected on F_{t_i} before averaging"""
    g = pair.grid
    u = pair.control
    v = as_paths(v, pair.paths.at(i))
    gain = _current_gain(problem, pair, adjoints, i, v)
    if g.anticipates(i):
        j = i + g.m
        ahead = _gain(problem, pair, adjoints, j, u.at(j), v, u.at(j), u.at(i))
        if np.any(ahead):
            proj = (basis or RegressionBasis()).projector(
                pair.paths.at(i), pair.paths.delayed(i)
            )
            (ahead,) = proj(ahead)
        gain = gain + ahead
    return gain


def _hypothesis(k_report):
    verified = bool(k_report and k_report.get("pass"))
    if not verified:
        warnings.warn(
            "K was not shown to vanish; the maximum condition is advisory",
            KHypothesisNotVerified,
            stacklevel=3,
        )
    return verified


def _check_value(problem, v):
    if not problem.control_set.admits(v):
        raise InadmissibleControl(
            f"v={v!r} is outside U={problem.control_set.name}"
        )


def margin_estimate(problem, pair, adjoints, tau, v, basis=None):
    """(margin, standard error) at one (tau, v)"""
    _check_value(problem, v)
    i = _node(pair.grid, tau)
    return path_stats(margin_paths(problem, pair, adjoints, i, v, basis))


def mp_margin(problem, pair, adjoints, tau, v, ens=None, basis=None, k_report=None):
    _check(pair, adjoints, ens)
    _hypothesis(k_report)
    return margin_estimate(problem, pair, adjoints, tau, v, basis)[0]


def classical_margin(problem, pair, adjoints, tau, v):
    """H(tau, x, v) - H(tau, x, u) with no anticipated term: the condition
    for a problem without delay dependence.

    Reductions of the delayed condition, not computed here:

    - no delay dependence: b, sigma, l do not read (x_d, v_d), the anticipated
      term vanishes and the margin is this one.
    - convex U with H differentiable in (v, v_d): letting the spike shrink
      into a convex combination gives the local form

          < H_v(tau) + E[H_vd(tau + delta) | F_tau] 1_[0, T - delta)(tau),
            v - u(tau) > >= 0    for every v in U,

      where the second-order P terms drop out. Only the spike (nonconvex)
      form is scanned by scan_max_condition.
    """
    _check(pair, adjoints, None)
    _check_value(problem, v)
    i = _node(pair.grid, tau)
    return path_stats(_current_gain(problem, pair, adjoints, i, v))[0]


@dataclass
class MpReport:
    cells: list
    boundary_index: int
    advisory: bool
    tol: object = None
    violations: list = field(default_factory=list)

    def __post_init__(self):
        self.violations = [cell for cell in self.cells if not cell["pass"]]

    @property
    def passed(self):
        return not self.violations

    @property
    def min_margin(self):
        return min(cell["margin"] for cell in self.cells)

    def argmin(self, tau):
        """v with the smallest margin at tau"""
        row = [cell for cell in self.cells if cell["tau"] == tau]
        return min(row, key=lambda cell: cell["margin"])["v"]

    def to_records(self):
        return [
            {
                "tau": cell["tau"],
                "v": cell["v"],
                "margin": cell["margin"],
                "stderr": cell["stderr"],
                "pass": cell["pass"],
            }
            for cell in self.cells
        ]


def scan_values(problem, v_grid, include_boundary=True):
    values = [float(v) for v in v_grid]
    if include_boundary:
        values += [b for b in problem.control_set.boundary if b not in values]
    return sorted(set(values))


def scan_max_condition(
    problem,
    pair,
    adjoints,
    v_grid,
    tau_grid,
    tol=None,
    ens=None,
    basis=None,
    k_report=None,
    include_boundary=True,
    workers=1,
    stderr_multiple=DEFAULT_TOLERANCES["stderr_multiple"],
    floor=DEFAULT_TOLERANCES["margin"],
):
    """Margins on every (tau, v) cell. A cell fails when its margin is below
    -tol, or below -(stderr_multiple * stderr + floor) when tol is None."""
    if not len(v_grid) or not len(tau_grid):
        raise EmptyGrid("v_grid and tau_grid must both be non-empty")
    _check(pair, adjoints, ens)
    advisory = not _hypothesis(k_report)
    values = scan_values(problem, v_grid, include_boundary)
    for v in values:
        _check_value(problem, v)

    def cell(key):
        tau, v = key
        margin, stderr = margin_estimate(problem, pair, adjoints, tau, v, basis)
        limit = tol if tol is not None else stderr_multiple * stderr + floor
        return {
            "tau": float(tau),
            "v": v,
            "margin": margin,
            "stderr": stderr,
            "pass": bool(margin >= -limit),
        }

    keys = [(tau, v) for tau in tau_grid for v in values]
    workers = max(1, int(workers or 1))
    if workers == 1:
        cells = [cell(k) for k in keys]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cells = list(pool.map(cell, keys))

    g = pair.grid
    return MpReport(
        cells=cells, boundary_index=g.n_steps - g.m, advisory=advisory, tol=tol
    )
