#!/usr/bin/env python3
"""Single-vortex reproductive sweep over N, optionally with the baseline solvers."""

import argparse
import logging

from ptrom.harness.cli import resolve_output
from ptrom.harness.config import single_vortex_config
from ptrom.harness.pipeline import run_reproductive_suite
from ptrom.harness.reports import emit_reports


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 1000])
    ap.add_argument("--tol", type=float, default=1e-1)
    ap.add_argument("--baselines", action="store_true")
    ap.add_argument("--output", default="runs/reproductive")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    root = resolve_output(args.output)
    configs = [single_vortex_config(n, tol=args.tol, output_dir=str(root / f"N{n}")) for n in args.sizes]
    rows = run_reproductive_suite(configs, root, baselines=args.baselines)
    emit_reports(root)
    print(f"{'N':>6} {'M':>4} {'N_c':>5} {'MAE_D':>10} {'AE_H':>10} {'SF':>8}")
    for r in rows:
        print(f"{r['n']:6d} {r['M']:4d} {r['n_clusters']:5d} {r['mean_mae_d']:10.3e} "
              f"{r['mean_ae_h']:10.3e} {r['speedup']:8.2f}")


if __name__ == "__main__":
    main()
