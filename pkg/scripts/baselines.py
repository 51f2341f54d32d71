#!/usr/bin/env python3
"""Compare the implicit FOM against Heun, Barnes-Hut variants and plain GNAT at one parameter point."""

import argparse
import dataclasses
import logging

from ptrom.harness.cli import resolve_output
from ptrom.harness.config import ExperimentConfig, generate_initial_conditions
from ptrom.harness.pipeline import run_baselines, run_training_pipeline
from ptrom.integrators import PairwiseEvaluator, fom_simulate
from ptrom.io import dump_json


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, default=500)
    ap.add_argument("--t-final", type=float, default=1.0)
    ap.add_argument("--with-gnat", action="store_true")
    ap.add_argument("--output", default="runs/baselines")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")

    root = resolve_output(args.output)
    cfg = ExperimentConfig(kind="vortex_pair", n=args.n, t_span=(0.0, args.t_final), output_dir=str(root))
    mu = cfg.queries()[-1]
    x0, sys = generate_initial_conditions(cfg, mu)
    fom = fom_simulate(x0, cfg.grid, cfg.newton, PairwiseEvaluator(sys))
    bundle = run_training_pipeline(cfg) if args.with_gnat else None
    rows = run_baselines(cfg, bundle, fom, mu)
    dump_json(root / "timing" / "baselines.json", [dataclasses.asdict(r) for r in rows])
    for r in rows:
        print(f"{r.name:28s} t={r.wall_time:9.3f}s mae_d={r.mean_mae_d:.3e} ae_h={r.mean_ae_h:.3e}")


if __name__ == "__main__":
    main()
