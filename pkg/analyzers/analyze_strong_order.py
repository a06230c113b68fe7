#!/usr/bin/env python3
"""
Strong order of the forward Euler scheme on dX = X dB, X(0) = 1, whose exact
solution is exp(B(T) - T/2). Coarser grids reuse the increments of the finest.
"""
import argparse
import sys
from pathlib import Path

import numpy as np

# Add lib to path before importing custom modules
sys.path.append(str(Path(__file__).resolve().parent.parent / "lib"))

from config import get_run_config, load_config  # noqa: E402
from core import make_grid, path_stats, sample_brownian  # noqa: E402
from output import write_data  # noqa: E402
from problems import exp_martingale_setup  # noqa: E402

RATIO_RANGE = (1.25, 1.60)


def strong_errors(levels, T, delta, n_paths, seed, workers=1):
    """E|X_N - exact| for steps per delay m, m/2, ... (levels values)"""
    setup = exp_martingale_setup()
    finest = max(levels)
    fine = sample_brownian(make_grid(T, delta, finest), n_paths, seed, workers)
    exact = np.exp(fine.terminal_value() - T / 2)

    rows = []
    for m in sorted(levels, reverse=True):
        ens = fine.coarsen(finest // m)
        pair = setup.pair(ens.grid, ens, workers)
        error, stderr = path_stats(np.abs(pair.paths.terminal() - exact))
        rows.append({"h": ens.grid.h, "error": error, "stderr": stderr})

    rows.sort(key=lambda row: row["h"])
    for finer, coarser in zip(rows, rows[1:]):
        coarser["ratio"] = coarser["error"] / finer["error"]
    rows[0]["ratio"] = float("nan")
    return rows


def main():
    parser = argparse.ArgumentParser(description="Forward-solver strong order study")
    parser.add_argument("--config", default="config.yaml", help="YAML config file")
    parser.add_argument("--out", help="Output file for the error table")
    parser.add_argument("--seed", type=int, help="Override the ensemble seed")
    parser.add_argument("--threads", type=int, help="Worker threads")
    parser.add_argument(
        "--levels",
        default="64,128,256",
        help="Steps per delay to compare (default: 64,128,256)",
    )
    args = parser.parse_args()

    run = get_run_config(load_config(args.config), args.seed, args.threads)
    levels = [int(level) for level in args.levels.split(",")]
    rows = strong_errors(levels, run.T, run.delta, run.n_paths, run.seed, run.threads)

    if args.out:
        header = {"seed": run.seed, "n_paths": run.n_paths, "levels": args.levels}
        write_data(rows, args.out, header=header)

    passed = True
    for row in rows:
        ratio = row["ratio"]
        ok = np.isnan(ratio) or RATIO_RANGE[0] <= ratio <= RATIO_RANGE[1]
        passed = passed and ok
        mark = "✓" if ok else "✗"
        print(f"  {mark} h={row['h']:.6g} error={row['error']:.6g} ratio={ratio:.4g}")
    print(f"Strong order study {'passed' if passed else 'failed'}")
    sys.exit(0 if passed else 1)


if __name__ == "__main__":
    main()
