#!/usr/bin/env python3
"""
delaymp - numerical checks of the stochastic maximum principle with delay
"""
import argparse
import sys
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

# Add lib to path before importing custom modules
sys.path.append(str(Path(__file__).resolve().parent / "lib"))

from absde import martingale_profile, solve_absde  # noqa: E402
from adjoint import (  # noqa: E402
    check_k_vanishes,
    cross_term_identity,
    solve_adjoints,
)
from config import (  # noqa: E402
    example_stanza,
    get_absde_spec_name,
    get_adjoint_settings,
    get_basis,
    get_lq_params,
    get_mp_settings,
    get_output_format,
    get_run_config,
    get_sdde_settings,
    get_variation_settings,
    load_config,
)
from core import node_means, node_sds, sample_brownian  # noqa: E402
from errors import (  # noqa: E402
    ConfigError,
    EmptyGrid,
    GridError,
    InsufficientEpsilons,
    KHypothesisNotVerified,
)
from lq import (  # noqa: E402
    lq_exact_adjoints,
    lq_report_text,
    verify_optimality,
)
from mp import scan_max_condition  # noqa: E402
from output import write_data, write_text  # noqa: E402
from problems import (  # noqa: E402
    ABSDE_SPECS,
    BLOCK_RECURSION_Y0,
    brownian_forward,
    get_setup,
    lq_setup,
)
from sdde import evaluate_cost, sup_moment  # noqa: E402
from variation import (  # noqa: E402
    SpikeSpec,
    check_eps_list,
    order_checks,
    order_study,
    simulate_variational,
)

VERSION = "0.1.0"
ABSDE_ORACLES = {"block_recursion": BLOCK_RECURSION_Y0, "constant_martingale": 1.0}
ABSDE_RTOL = 1e-2
ORDER_CHECK_TEXT = {
    "m1_band": "slope(m1) within the first-order band",
    "m4_floor": "slope(m4) above the second-order floor",
    "separation": "slope(m4) - slope(m1) separated",
}
USAGE_ERRORS = (ConfigError, InsufficientEpsilons, EmptyGrid, GridError)


@dataclass
class ExperimentManifest:
    """Provenance written at the top of every output file"""

    subcommand: str
    run: object
    config_path: str
    out: str
    started: float = field(default_factory=time.time)

    def header(self, **extra):
        grid = self.run.grid
        lines = {
            "delaymp": VERSION,
            "subcommand": self.subcommand,
            "config": self.config_path,
            "seed": self.run.seed,
            "grid": grid.describe(),
            "n_paths": self.run.n_paths,
            "degree": self.run.degree,
            "started": time.strftime(
                "%Y-%m-%dT%H:%M:%S", time.localtime(self.started)
            ),
        }
        lines.update(extra)
        return lines

    def path(self, default_name):
        """--out if given, else a file under the configured output directory"""
        if self.out:
            return Path(self.out)
        return Path(self.run.output_dir) / default_name


def _setup(section, name, **kwargs):
    try:
        return get_setup(name, **kwargs)
    except ValueError as e:
        raise ConfigError(f"{section}.problem", str(e)) from None


def _v_grid(settings, problem):
    control_set = problem.control_set
    for v in settings["v_grid"]:
        if not control_set.admits(v):
            raise ConfigError("mp.v_grid", f"v={v!r} is outside U={control_set.name}")
    return settings["v_grid"]


def simulate_command(config, manifest):
    run = manifest.run
    settings = get_sdde_settings(config)
    setup = _setup("sdde", settings["problem"], params=get_lq_params(config, run))
    grid = run.grid
    ens = sample_brownian(grid, run.n_paths, run.seed, run.threads)
    pair = setup.pair(grid, ens, run.threads)

    times = grid.state_times()
    shown = min(settings["paths_written"], pair.n_paths)
    rows = [
        {"path": path, "t": float(t), "x": float(pair.paths.x[path, k])}
        for path in range(shown)
        for k, t in enumerate(times)
    ]
    out = manifest.path("simulate.csv")
    write_data(rows, out, "csv", manifest.header(problem=setup.name))

    moment = sup_moment(pair.paths, settings["moment_p"])
    cost = evaluate_cost(setup.problem, pair.paths, pair.control)
    print(f"Simulated {pair.n_paths} paths on {grid.n_steps} steps -> {out}")
    print(f"  E sup|X|^{settings['moment_p']:g} = {moment!r}")
    print(f"  J = {cost['estimate']!r} +/- {cost['stderr']!r}")
    return 0


def solve_absde_command(config, manifest):
    run = manifest.run
    name = get_absde_spec_name(config)
    if name not in ABSDE_SPECS:
        raise ConfigError("absde.spec", f"unknown spec {name!r}")
    spec = ABSDE_SPECS[name]()
    grid = run.grid
    ens = sample_brownian(grid, run.n_paths, run.seed, run.threads)
    forward = brownian_forward(grid, ens, run.threads)
    sol = solve_absde(spec, grid, forward, ens, get_basis(config, run))
    profile = martingale_profile(sol, spec, grid, ens)

    mean_y, sd_y = node_means(sol.y), node_sds(sol.y)
    mean_z, sd_z = node_means(sol.z), node_sds(sol.z)
    rows = [
        {
            "t": float(t),
            "mean_y": float(mean_y[i]),
            "sd_y": float(sd_y[i]),
            "mean_z": float(mean_z[i]),
            "sd_z": float(sd_z[i]),
            "residual": float(profile[i]),
        }
        for i, t in enumerate(grid.backward_times())
    ]
    out = manifest.path("absde.csv")
    header = manifest.header(
        spec=spec.name, max_condition=sol.diagnostics["max_condition"]
    )
    write_data(rows, out, "csv", header)

    y0 = float(mean_y[0])
    print(f"Solved '{spec.name}' on {grid.n_steps} steps -> {out}")
    print(f"  mean Y(0) = {y0!r}")
    oracle = ABSDE_ORACLES.get(name)
    if oracle is None or grid.T != 1.0 or grid.delta != 0.5:
        return 0
    error = abs(y0 - oracle) / abs(oracle)
    mark = "✓" if error < ABSDE_RTOL else "✗"
    print(f"  {mark} relative error against {oracle!r}: {error:.3g}")
    return 0 if error < ABSDE_RTOL else 1


def _k_warning(k_report):
    if not k_report["pass"]:
        sup = k_report["sup_mean_abs_K"]
        print(f"WARNING: {k_report['note']} (sup E|K| = {sup!r})")


def adjoint_deviation(bundle, exact):
    """Largest node-mean gap in p, q, P, Q over [0, T]"""
    n = bundle.grid.n_steps + 1
    gaps = []
    for name in ("p", "q", "P", "Q"):
        solved = node_means(getattr(bundle, name))[:n]
        target = node_means(getattr(exact, name))[:n]
        gaps.append(np.max(np.abs(solved - target)))
    return float(max(gaps))


def adjoints_command(config, manifest):
    run = manifest.run
    settings = get_adjoint_settings(config)
    params = get_lq_params(config, run)
    setup = _setup("adjoint", settings["problem"], params=params, tau=settings["tau"])
    grid = run.grid
    ens = sample_brownian(grid, run.n_paths, run.seed, run.threads)
    pair = setup.pair(grid, ens, run.threads)
    bundle = solve_adjoints(setup.problem, pair, ens, get_basis(config, run))
    k_report = check_k_vanishes(bundle, run.tolerance("k_vanish"))

    s = SpikeSpec(
        tau=settings["tau"],
        eps=settings["eps_steps"] * grid.h,
        replacement=settings["replacement"],
    )
    variation = simulate_variational(setup.problem, pair, s, grid, ens, run.threads)
    identity = cross_term_identity(setup.problem, pair, bundle, variation, k_report)

    out = manifest.path("adjoints.csv")
    header = manifest.header(
        problem=setup.name,
        sup_mean_abs_K=k_report["sup_mean_abs_K"],
        cross_term=f"{identity['estimate']!r} +/- {identity['stderr']!r} "
        f"({identity['label']})",
    )
    write_data(bundle.node_summary(), out, "csv", header)
    print(f"Solved adjoints for '{setup.name}' -> {out}")
    print(f"  sup E|K| = {k_report['sup_mean_abs_K']!r}: {k_report['note']}")
    print(
        f"  cross term = {identity['estimate']!r} +/- {identity['stderr']!r} "
        f"[{identity['label']}]"
    )
    _k_warning(k_report)

    if setup.name != "lq":
        return 0
    worst = adjoint_deviation(bundle, lq_exact_adjoints(params, grid))
    tol = run.tolerance("adjoint")
    passed = worst < tol and k_report["pass"]
    mark = "✓" if passed else "✗"
    print(f"  {mark} largest deviation from p=1, q=P=Q=0: {worst!r} (tol {tol!r})")
    return 0 if passed else 1


def order_study_command(config, manifest):
    run = manifest.run
    settings = get_variation_settings(config)
    grid = run.grid
    eps_list = check_eps_list([k * grid.h for k in settings["eps_steps"]], grid)
    setup = replace(
        _setup(
            "variation",
            settings["problem"],
            params=get_lq_params(config, run),
            tau=settings["tau"],
        ),
        replacement=settings["replacement"],
    )
    ens = sample_brownian(grid, run.n_paths, run.seed, run.threads)
    pair = setup.pair(grid, ens, run.threads)

    study = order_study(
        setup.problem,
        pair,
        setup.family,
        eps_list,
        grid,
        ens,
        workers=run.threads,
        p=settings["p"],
    )
    rows = list(study["rows"]) + [{"eps": "slope", **study["slopes"]}]
    out = manifest.path("order_study.csv")
    write_data(rows, out, "csv", manifest.header(problem=setup.name, p=settings["p"]))

    slopes = study["slopes"]
    print(f"Order study on '{setup.name}' over {len(eps_list)} epsilons -> {out}")
    for name, slope in slopes.items():
        print(f"  slope {name} = {slope:.4f}")
    checks = order_checks(slopes, settings["p"])
    for name, ok in checks.items():
        print(f"  {'✓' if ok else '✗'} {ORDER_CHECK_TEXT[name]}")
    return 0 if all(checks.values()) else 1


def _tau_grid(grid, stride):
    return [grid.time_of(i) for i in range(0, grid.n_steps + 1, stride)]


def check_mp_command(config, manifest):
    run = manifest.run
    settings = get_mp_settings(config)
    params = get_lq_params(config, run)
    setup = _setup("mp", settings["problem"], params=params)
    grid = run.grid
    ens = sample_brownian(grid, run.n_paths, run.seed, run.threads)
    pair = setup.pair(grid, ens, run.threads)
    basis = get_basis(config, run)
    if settings["adjoints"] == "exact":
        adjoints = lq_exact_adjoints(params, grid)
    else:
        adjoints = solve_adjoints(setup.problem, pair, ens, basis)
    k_report = check_k_vanishes(adjoints, run.tolerance("k_vanish"))

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", KHypothesisNotVerified)
        report = scan_max_condition(
            setup.problem,
            pair,
            adjoints,
            _v_grid(settings, setup.problem),
            _tau_grid(grid, settings["tau_stride"]),
            tol=settings["tol"],
            ens=ens,
            basis=basis,
            k_report=k_report,
            include_boundary=settings["include_boundary"],
            workers=run.threads,
            stderr_multiple=run.tolerance("stderr_multiple"),
            floor=run.tolerance("margin"),
        )

    out = manifest.path("check_mp.csv")
    header = manifest.header(
        problem=setup.name,
        adjoints=adjoints.source,
        boundary_index=report.boundary_index,
        advisory=report.advisory,
    )
    write_data(report.to_records(), out, "csv", header)
    print(f"Scanned {len(report.cells)} (tau, v) cells on '{setup.name}' -> {out}")
    print(f"  min margin = {report.min_margin!r}, violations: {len(report.violations)}")
    if report.advisory:
        _k_warning(k_report)
        print("WARNING: maximum condition reported as advisory only")
        return 0
    mark = "✓" if report.passed else "✗"
    print(f"  {mark} maximum condition {'holds' if report.passed else 'violated'}")
    return 0 if report.passed else 1


def lq_demo_command(config, manifest):
    run = manifest.run
    params = get_lq_params(config, run)
    setup = lq_setup(params)
    grid = run.grid
    ens = sample_brownian(grid, run.n_paths, run.seed, run.threads)
    pair = setup.pair(grid, ens, run.threads)
    adjoints = lq_exact_adjoints(params, grid)
    k_report = check_k_vanishes(adjoints, run.tolerance("k_vanish"))
    scan = scan_max_condition(
        setup.problem,
        pair,
        adjoints,
        _v_grid(get_mp_settings(config), setup.problem),
        _tau_grid(grid, 1),
        tol=run.tolerance("margin"),
        k_report=k_report,
        workers=run.threads,
    )
    verification = verify_optimality(params, grid, ens, workers=run.threads)

    out_dir = Path(manifest.out or Path(run.output_dir) / "lq_demo")
    header = manifest.header(problem="lq")
    fmt = get_output_format(config)
    write_data(adjoints.node_summary(), out_dir / f"adjoints.{fmt}", fmt, header)
    write_data(scan.to_records(), out_dir / f"margins.{fmt}", fmt, header)
    write_data(verification["rows"], out_dir / f"optimality.{fmt}", fmt, header)
    report = lq_report_text(params, grid, verification, scan, k_report)
    write_text(report, out_dir / "report.txt", header)

    print(report, end="")
    print(f"Wrote lq-demo outputs to {out_dir}")
    return 0 if verification["passed"] and scan.passed else 1


COMMANDS = {
    "simulate": (simulate_command, "Simulate the controlled SDDE (path, t, x)"),
    "solve-absde": (solve_absde_command, "Solve an anticipated BSDE oracle"),
    "adjoints": (adjoints_command, "Solve the adjoint equations for a candidate"),
    "order-study": (order_study_command, "Spike-variation order estimates"),
    "check-mp": (check_mp_command, "Scan the delayed maximum condition"),
    "lq-demo": (lq_demo_command, "End-to-end LQ benchmark with report"),
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="YAML config file")
    common.add_argument("--out", help="Output file (lq-demo: directory)")
    common.add_argument("--seed", type=int, help="Override the ensemble seed")
    common.add_argument("--threads", type=int, help="Worker threads")

    parser = argparse.ArgumentParser(
        description="delaymp - stochastic maximum principle with delay"
    )
    subparsers = parser.add_subparsers(dest="command", help="Commands")
    for name, (_, help_text) in COMMANDS.items():
        subparsers.add_parser(name, parents=[common], help=help_text)
    return parser


def run(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else 2
    if not args.command:
        parser.print_help()
        return 2

    try:
        config = load_config(args.config)
        run_config = get_run_config(config, args.seed, args.threads, None)
        manifest = ExperimentManifest(
            subcommand=args.command,
            run=run_config,
            config_path=args.config,
            out=args.out,
        )
        handler, _ = COMMANDS[args.command]
        return handler(config, manifest)
    except ConfigError as e:
        print(f"Error: {e}")
        print(f"Example stanza for '{e.key}':")
        print(example_stanza(e.key), end="")
        return 2
    except USAGE_ERRORS as e:
        print(f"Error: {e}")
        return 2
    except Exception as e:
        print(f"Error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
