"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
Relative output directories are resolved against ``$PTROM_OUTPUT_ROOT``
when that variable is set.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from ..integrators import IntegrationError, PairwiseEvaluator, fom_simulate
from ..kernel import GridSpec, KernelError
from ..reduction import ReductionError
from .config import ConfigError, ExperimentConfig, characteristic_length, generate_initial_conditions, single_vortex_config
from .pipeline import (
    NumericalFailure,
    OfflineBundle,
    StageError,
    emit_query_reports,
    run_baselines,
    run_online_queries,
    run_reproductive_suite,
    run_training_pipeline,
)
from .reports import emit_reports, export_velocity_field

ENV_OUTPUT_ROOT = "PTROM_OUTPUT_ROOT"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

log = logging.getLogger("ptrom")


def resolve_output(path: str | Path) -> Path:
    p = Path(path)
    root = os.environ.get(ENV_OUTPUT_ROOT)
    return p if p.is_absolute() or not root else Path(root) / p


def _load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        data = ExperimentConfig.load(args.config).to_dict()
    overrides = {
        "kind": args.kind, "n": args.n, "dt": args.dt, "seed": args.seed,
        "output_dir": args.output, "query_grid": args.query_grid,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    if args.t_final is not None:
        data["t_span"] = [data.get("t_span", [0.0, 5.0])[0], args.t_final]
    rom = dict(data.get("rom", {}))
    rom_over = {"M": args.M, "M_r": args.M_r, "n_sample": args.n_sample, "clustering": args.clustering, "tol": args.tol}
    rom.update({k: v for k, v in rom_over.items() if v is not None})
    if rom:
        data["rom"] = rom
    cfg = ExperimentConfig.from_dict(data)
    cfg.output_dir = str(resolve_output(cfg.output_dir))
    return cfg


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment configuration")
    p.add_argument("--kind", choices=["vortex_pair", "mushroom", "single_vortex"])
    p.add_argument("--n", type=int)
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="run directory (relative paths use $%s)" % ENV_OUTPUT_ROOT)
    p.add_argument("--query-grid", type=int)
    p.add_argument("--M", type=int)
    p.add_argument("--M-r", dest="M_r", type=int)
    p.add_argument("--n-sample", type=int)
    p.add_argument("--clustering", help='"nn:<p_c>", "bh:<theta>" or "none"')
    p.add_argument("--tol", type=float)


def cmd_train(args) -> int:
    cfg = _load_config(args)
    bundle = run_training_pipeline(cfg)
    print(json.dumps({k: bundle.meta[k] for k in ("M", "M_r", "n_sample", "n_clusters")}))
    return EXIT_OK


def cmd_query(args) -> int:
    cfg = _load_config(args)
    root = Path(cfg.output_dir)
    bundle_dir = Path(args.bundle) if args.bundle else root / "bundle"
    bundle = OfflineBundle.load(bundle_dir) if bundle_dir.exists() else run_training_pipeline(cfg)
    results = run_online_queries(cfg, bundle, persist=False)
    summary = emit_query_reports(root, results)
    emit_reports(root)
    print(json.dumps({k: summary[k] for k in ("n_queries", "mean_mae_d", "mean_ae_h")}))
    if len(results) < len(cfg.queries()):
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_reproduce(args) -> int:
    root = resolve_output(args.output or "runs/reproductive")
    configs = [
        single_vortex_config(n, tol=args.tol or 1e-1, output_dir=str(root / f"N{n}")) for n in args.sizes
    ]
    rows = run_reproductive_suite(configs, root, baselines=args.baselines)
    emit_reports(root)
    for r in rows:
        print(f"N={r['n']:5d} Nc={r['n_clusters']:4d} mae_d={r['mean_mae_d']:.3e} "
              f"ae_h={r['mean_ae_h']:.3e} sf={r['speedup']:.2f}")
    return EXIT_OK


def cmd_baseline(args) -> int:
    cfg = _load_config(args)
    mu = cfg.queries()[0]
    x0, psys = generate_initial_conditions(cfg, mu)
    fom = fom_simulate(x0, cfg.grid, cfg.newton, PairwiseEvaluator(psys))
    bundle = run_training_pipeline(cfg) if args.with_gnat else None
    rows = run_baselines(cfg, bundle, fom, mu)
    from ..io import dump_json

    dump_json(Path(cfg.output_dir) / "timing" / "baselines.json", [dataclasses.asdict(r) for r in rows])
    for r in rows:
        print(f"{r.name:28s} t={r.wall_time:9.3f}s mae_d={r.mean_mae_d:.3e} ae_h={r.mean_ae_h:.3e}")
    return EXIT_OK


def cmd_field(args) -> int:
    cfg = _load_config(args)
    mu = cfg.queries()[0] if args.mu is None else args.mu
    x0, psys = generate_initial_conditions(cfg, mu)
    x = x0
    if args.state == "final":
        x = fom_simulate(x0, cfg.grid, cfg.newton, PairwiseEvaluator(psys)).snapshots.columns[:, -1]
    length = characteristic_length(x0)
    half = 0.5 * args.c_g * length
    chi, psi = x[: psys.n], x[psys.n:]
    cx, cy = 0.5 * (chi.min() + chi.max()), 0.5 * (psi.min() + psi.max())
    grid = GridSpec(cx - half, cx + half, cy - half, cy + half, args.nx, args.ny)
    gamma_bar = args.gamma_bar or float(np.max(np.abs(psys.circulation)))
    path = export_velocity_field(Path(cfg.output_dir) / f"field_{args.state}.csv", x, psys, grid,
                                 args.c_g, gamma_bar, length)
    print(path)
    return EXIT_OK


def cmd_report(args) -> int:
    manifest = emit_reports(resolve_output(args.root))
    print(f"{manifest['n_files']} files")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptrom", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the four-stage offline pipeline")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("query", help="online parametric queries against a trained bundle")
    _add_config_flags(p)
    p.add_argument("--bundle", help="bundle directory (default: <output>/bundle, trained if missing)")
    p.set_defaults(func=cmd_query)

    p = sub.add_parser("reproduce", help="single-vortex reproductive sweep")
    p.add_argument("--sizes", type=int, nargs="+", default=[100, 500, 1000])
    p.add_argument("--tol", type=float)
    p.add_argument("--output")
    p.add_argument("--baselines", action="store_true")
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("baseline", help="FOM, Heun, Barnes-Hut and GNAT comparisons")
    _add_config_flags(p)
    p.add_argument("--with-gnat", action="store_true")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("field", help="export a non-dimensional velocity-field lattice")
    _add_config_flags(p)
    p.add_argument("--mu", type=float, nargs="+")
    p.add_argument("--state", choices=["initial", "final"], default="initial")
    p.add_argument("--c-g", type=float, default=1.25)
    p.add_argument("--gamma-bar", type=float)
    p.add_argument("--nx", type=int, default=101)
    p.add_argument("--ny", type=int, default=101)
    p.set_defaults(func=cmd_field)

    p = sub.add_parser("report", help="write a manifest for a run directory")
    p.add_argument("root")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        # timed loops are measured serially, so BLAS gets a single thread
        with threadpool_limits(limits=1):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, NumericalFailure, IntegrationError, KernelError, ReductionError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
