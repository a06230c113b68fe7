#!/usr/bin/env python3
"""
Named test problems: the LQ benchmark, a smooth nonlinear delay problem, the
exponential martingale, and the ABSDE oracles
"""
from dataclasses import dataclass
from typing import Callable

import numpy as np

from absde import AbsdeSpec
from lq import LqParams, closed_form_process
from sdde import (
    ControlProcess,
    DelayProblem,
    InitialData,
    OptimalPair,
    finite_set,
    simulate,
)
from variation import SpikeSpec

# Y(0) of Y' = -E[Y(t + delta)], Y = 1 on [T, T + delta], for T=1, delta=0.5:
# Y = 2 - t on [0.5, 1] and 2.125 - 1.5 t + t^2 / 2 on [0, 0.5]
BLOCK_RECURSION_Y0 = 2.125


def smooth_problem():
    """b = sin x + x_d / 2 + v, sigma = 0.3 x + 0.2 x_d + 0.5 v + 0.2 v_d,
    l = v^2, h = x, U = {-1, 1}"""
    return DelayProblem(
        name="smooth",
        b=lambda t, x, xd, v, vd: np.sin(x) + 0.5 * xd + v,
        sigma=lambda t, x, xd, v, vd: 0.3 * x + 0.2 * xd + 0.5 * v + 0.2 * vd,
        l=lambda t, x, xd, v, vd: v**2,
        h_term=lambda x: x,
        b_x=lambda t, x, xd, v, vd: np.cos(x),
        b_xx=lambda t, x, xd, v, vd: -np.sin(x),
        b_xd=lambda t, x, xd, v, vd: 0.5,
        sigma_x=lambda t, x, xd, v, vd: 0.3,
        sigma_xd=lambda t, x, xd, v, vd: 0.2,
        h_x=lambda x: 1.0,
        control_set=finite_set([-1.0, 1.0]),
    )


def exp_martingale_problem():
    """dX = X dB, exact solution exp(B(t) - t / 2) from X(0) = 1"""
    return DelayProblem.uncontrolled(
        "exp_martingale",
        drift=lambda t, x, xd: 0.0,
        diffusion=lambda t, x, xd: x,
        sigma_x=lambda t, x, xd, v, vd: 1.0,
    )


def brownian_problem():
    """X = B, the forward state of the ABSDE oracles"""
    return DelayProblem.uncontrolled(
        "brownian", drift=lambda t, x, xd: 0.0, diffusion=lambda t, x, xd: 1.0
    )


def frozen_problem():
    """b = v, sigma = 0: a spike moves the state by an integral of length eps"""
    return DelayProblem(
        name="frozen",
        b=lambda t, x, xd, v, vd: v,
        control_set=finite_set([-1.0, 1.0]),
    )


@dataclass(frozen=True)
class Setup:
    """A problem with its initial data, candidate control and spike"""

    name: str
    problem: DelayProblem
    init: Callable
    candidate: Callable
    replacement: float = 1.0
    tau: float = 0.25

    def pair(self, grid, ens, workers=1):
        init = self.init(grid)
        control = self.candidate(grid, ens.n_paths)
        paths = simulate(self.problem, control, init, grid, ens, workers)
        return OptimalPair(
            problem=self.problem, paths=paths, control=control, init=init
        )

    def family(self, eps):
        return SpikeSpec(tau=self.tau, eps=eps, replacement=self.replacement)


def lq_setup(params=None, tau=0.25):
    params = params or LqParams()
    return Setup(
        name="lq",
        problem=params.problem(),
        init=params.init,
        candidate=lambda grid, n: closed_form_process(params, grid, n),
        tau=tau,
    )


def smooth_setup(tau=0.25):
    def candidate(grid, n):
        return ControlProcess.constant(grid, n, -1.0, np.full(grid.m, -1.0), "u=-1")

    return Setup(
        name="smooth",
        problem=smooth_problem(),
        init=lambda grid: InitialData.constant(grid, 1.0, -1.0),
        candidate=candidate,
        tau=tau,
    )


def exp_martingale_setup():
    def candidate(grid, n):
        return ControlProcess.constant(grid, n, 0.0, np.zeros(grid.m), "none")

    return Setup(
        name="exp_martingale",
        problem=exp_martingale_problem(),
        init=lambda grid: InitialData.constant(grid, 1.0, 0.0),
        candidate=candidate,
        replacement=0.0,
    )


SETUPS = {
    "lq": lq_setup,
    "smooth": smooth_setup,
    "exp_martingale": exp_martingale_setup,
}


def get_setup(name, params=None, tau=None):
    if name not in SETUPS:
        raise ValueError(f"unknown problem '{name}', choose from {sorted(SETUPS)}")
    kwargs = {}
    if name == "lq":
        kwargs["params"] = params
    if tau is not None and name != "exp_martingale":
        kwargs["tau"] = tau
    return SETUPS[name](**kwargs)


def brownian_forward(grid, ens, workers=1):
    init = InitialData.constant(grid, 0.0, 0.0)
    control = ControlProcess.constant(grid, ens.n_paths, 0.0, init.eta, "none")
    return simulate(brownian_problem(), control, init, grid, ens, workers)


def constant_martingale_spec():
    return AbsdeSpec(
        name="constant martingale",
        generator=lambda t, y, z, a, b, state: 0.0,
        terminal=lambda k, x: np.ones_like(x),
    )


def block_recursion_spec():
    """f = E[Y(t + delta)], Y = 1 on [T, T + delta]"""
    return AbsdeSpec(
        name="block recursion",
        generator=lambda t, y, z, a, b, state: a,
        terminal=lambda k, x: np.ones_like(x),
    )


ABSDE_SPECS = {
    "constant_martingale": constant_martingale_spec,
    "block_recursion": block_recursion_spec,
}
