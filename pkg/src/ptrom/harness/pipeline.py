"""Offline training pipeline, online queries, reproductive sweeps and baselines."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..integrators import FomResult, PairwiseEvaluator, fom_simulate, heun_simulate
from ..io import dump_json, load_json, save_csv
from ..kernel import ParticleSystem, hamiltonian
from ..metrics import ErrorReport, error_report, speedup_factor
from ..quadtree import BarnesHut, BarnesHutEvaluator, Neighbor
from ..reduction import (
    GnatOperator,
    PODBasis,
    PodClustering,
    ResidualBasis,
    SurrogateSourceBasis,
    build_pod,
    gnat_operator,
    greedy_sample,
)
from ..rom_solvers import FullStateEvaluator, HyperPair, RomTrajectory, lspg_simulate, ptrom_simulate, reconstruct_output
from .config import ExperimentConfig, characteristic_length, generate_initial_conditions

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names which one."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage} failed: {cause}")
        self.stage = stage
        self.cause = cause


class NumericalFailure(RuntimeError):
    """A solver did not converge where convergence was required."""


@dataclass
class OfflineBundle:
    pod: PODBasis
    residual: ResidualBasis
    gnat: GnatOperator
    surrogate: SurrogateSourceBasis | None
    meta: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    fom_runs: list[FomResult] = field(default_factory=list, repr=False)

    @property
    def n_clusters(self) -> int:
        return 0 if self.surrogate is None else self.surrogate.n_clusters

    def save(self, root: str | Path) -> Path:
        root = Path(root)
        self.pod.save(root / "pod")
        PODBasis(self.residual.phi_r, self.residual.singular_values, np.zeros(self.residual.phi_r.shape[0])).save(
            root / "residual"
        )
        self.gnat.save(root / "gnat")
        if self.surrogate is not None:
            self.surrogate.save(root / "surrogate")
        dump_json(root / "bundle.json", self.meta)
        return root

    @classmethod
    def load(cls, root: str | Path) -> "OfflineBundle":
        root = Path(root)
        meta = load_json(root / "bundle.json")
        pod = PODBasis.load(root / "pod")
        res = PODBasis.load(root / "residual")
        n = pod.n_dofs // 2
        sur = SurrogateSourceBasis.load(root / "surrogate") if (root / "surrogate.json").exists() else None
        return cls(pod, ResidualBasis(res.phi, res.singular_values), GnatOperator.load(root / "gnat", n), sur, meta)


def _criterion(config: ExperimentConfig):
    return config.rom.criterion()


def run_training_pipeline(config: ExperimentConfig, persist: bool = True) -> OfflineBundle:
    """Stages 1-4: FOM snapshots, POD + clustering, LSPG residuals, sampling + gappy operator."""
    rom = config.rom
    grid = config.grid
    mus = config.training_points()
    timings: dict = {"fom": [], "lspg": []}

    # Stage 1 ---------------------------------------------------------------
    try:
        runs, systems = [], []
        for mu in mus:
            x0, sys = generate_initial_conditions(config, mu)
            res = fom_simulate(x0, grid, config.newton, PairwiseEvaluator(sys))
            if res.n_failed:
                log.warning("training FOM at mu=%s: %d steps hit max_iters", mu, res.n_failed)
            runs.append(res)
            systems.append(sys)
            timings["fom"].append(res.wall_time)
        snapshots = np.hstack([r.snapshots.columns for r in runs])
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage tag
        raise StageError("1 (FOM snapshots)", exc) from exc

    # Stage 2 ---------------------------------------------------------------
    try:
        pod = build_pod(snapshots, rom.M, x0, subtract_reference=rom.center_snapshots)
        criterion = _criterion(config)
        gamma_ref = np.mean([s.circulation for s in systems], axis=0)
        clustering = PodClustering(pod, gamma_ref, criterion, rom.leaf_capacity) if criterion else None
        all_targets = clustering.surrogate(range(config.n)) if clustering else None
    except Exception as exc:  # noqa: BLE001
        raise StageError("2 (POD and clustering)", exc) from exc

    # Stage 3 ---------------------------------------------------------------
    try:
        residuals: list[np.ndarray] = []
        cfg = rom.rom_config()
        for sys in systems:
            if all_targets is None:
                ev = FullStateEvaluator(pod, sys)
            else:
                ev = HyperPair(pod, sys, range(config.n), all_targets.reassign_circulation(sys.circulation))
            traj = lspg_simulate(pod, ev, grid, cfg, residuals)
            timings["lspg"].append(traj.wall_time)
        R = np.array(residuals).T
        residual = ResidualBasis.from_snapshots(R, rom.M_r)
    except Exception as exc:  # noqa: BLE001
        raise StageError("3 (LSPG residual basis)", exc) from exc

    # Stage 4 ---------------------------------------------------------------
    try:
        ids = greedy_sample(residual.phi_r, rom.n_sample, rom.preseed)
        gop = gnat_operator(residual.phi_r, ids)
        surrogate = clustering.surrogate(ids) if clustering else None
    except Exception as exc:  # noqa: BLE001
        raise StageError("4 (sampling and gappy operator)", exc) from exc

    meta = {
        "config_digest": config.digest(),
        "training_points": mus.tolist(),
        "M": rom.M,
        "M_r": rom.M_r,
        "n_sample": rom.n_sample,
        "n_clusters": 0 if surrogate is None else surrogate.n_clusters,
        "n_sources": 0 if surrogate is None else surrogate.n_sources,
        "n_clusters_all_targets": 0 if all_targets is None else all_targets.n_clusters,
        "n_residual_snapshots": int(R.shape[1]),
        "sample_ids": list(map(int, ids)),
        "snapshot_singular_values": pod.singular_values.tolist(),
    }
    bundle = OfflineBundle(pod, residual, gop, surrogate, meta, timings, runs)
    if persist:
        out = Path(config.output_dir)
        bundle.save(out / "bundle")
        config.save(out / "config.json")
        dump_json(out / "timing" / "training.json", timings)
    return bundle


@dataclass
class QueryResult:
    mu: list[float]
    report: ErrorReport
    t_fom: float
    t_rom: float
    rom_failed: int
    kernel_evals_per_step: float
    rom_states: np.ndarray = field(repr=False)
    fom_states: np.ndarray = field(repr=False)
    trajectory: RomTrajectory = field(repr=False)

    @property
    def speedup(self) -> float:
        return speedup_factor(self.t_fom, self.t_rom)


def run_query(config: ExperimentConfig, bundle: OfflineBundle, mu, fom: FomResult | None = None) -> QueryResult:
    """Fresh FOM reference plus PTROM run at ``mu``."""
    x0, sys = generate_initial_conditions(config, mu)
    grid = config.grid
    if fom is None:
        fom = fom_simulate(x0, grid, config.newton, PairwiseEvaluator(sys))
    traj, ev = ptrom_simulate(bundle.pod, bundle.gnat, bundle.surrogate, sys, grid, config.rom.rom_config())
    X = reconstruct_output(traj.x_hat_history, bundle.pod)
    rep = error_report(fom.snapshots.columns, X, sys, characteristic_length(x0), fom.wall_time, traj.wall_time)
    per_step = traj.kernel_evals / max(traj.iterations.sum() + traj.n_steps, 1)
    return QueryResult(
        list(map(float, np.ravel(mu))), rep, fom.wall_time, traj.wall_time, traj.n_failed,
        per_step, X, fom.snapshots.columns, traj,
    )


def run_online_queries(config: ExperimentConfig, bundle: OfflineBundle, persist: bool = True) -> list[QueryResult]:
    results = []
    for mu in config.queries():
        try:
            results.append(run_query(config, bundle, mu))
        except Exception as exc:  # noqa: BLE001 - one failed query must not stop the grid
            log.error("query mu=%s failed: %s", mu, exc)
    if persist:
        emit_query_reports(Path(config.output_dir), results)
    return results


def emit_query_reports(root: str | Path, results: list[QueryResult]) -> dict:
    root = Path(root)
    rows, trows, files = [], [], []
    for i, q in enumerate(results):
        stem = root / "queries" / f"q{i:03d}"
        q.report.to_csv(stem.with_suffix(".errors.csv"))
        q.report.to_json(stem.with_suffix(".summary.json"), include_timing=False)
        q.trajectory.save(stem, include_timing=False)
        rows.append(q.mu + [q.report.mean_mae_d, q.report.mean_ae_h, q.rom_failed])
        trows.append(q.mu + [q.t_fom, q.t_rom, q.speedup])
        files.append(str(stem.relative_to(root)))
    k = len(results[0].mu) if results else 0
    mu_cols = ",".join(f"mu{j + 1}" for j in range(k))
    if results:
        save_csv(root / "error_surface.csv", np.array(rows), header=f"{mu_cols},mae_d,ae_h,failed_steps")
        save_csv(root / "timing" / "speedup_surface.csv", np.array(trows), header=f"{mu_cols},t_fom,t_rom,sf")
    summary = {
        "n_queries": len(results),
        "mean_mae_d": float(np.mean([r[k] for r in rows])) if rows else None,
        "mean_ae_h": float(np.mean([r[k + 1] for r in rows])) if rows else None,
        "files": files,
    }
    dump_json(root / "queries_summary.json", summary)
    if results:
        dump_json(root / "timing" / "queries.json", {"mean_sf": float(np.mean([q.speedup for q in results]))})
    return summary


# ---------------------------------------------------------------------------
# baselines


@dataclass
class BaselineResult:
    name: str
    wall_time: float
    mean_mae_d: float
    mean_ae_h: float


def _baseline_row(name, res: FomResult, ref: np.ndarray, sys: ParticleSystem, length: float) -> BaselineResult:
    rep = error_report(ref, res.snapshots.columns, sys, length)
    return BaselineResult(name, res.wall_time, rep.mean_mae_d, rep.mean_ae_h)


def select_leaf_capacity(x0, sys, criterion, capacities, repeats: int = 3) -> int:
    """Fastest leaf capacity for one velocity evaluation at ``x0`` (0 stands for N)."""
    best, best_t = None, np.inf
    for cap in capacities:
        c = sys.n if cap <= 0 else min(cap, sys.n)
        ev = BarnesHutEvaluator(sys, criterion, c)
        t = time.perf_counter()
        for _ in range(repeats):
            ev.velocity(x0)
        t = time.perf_counter() - t
        if t < best_t:
            best, best_t = c, t
    return best


def run_baselines(config: ExperimentConfig, bundle: OfflineBundle | None, fom: FomResult, mu=None) -> list[BaselineResult]:
    """Heun, Barnes-Hut (implicit and explicit) and plain GNAT against the implicit FOM."""
    x0, sys = generate_initial_conditions(config, mu)
    grid = config.grid
    length = characteristic_length(x0)
    ref = fom.snapshots.columns
    opts = config.baseline
    out = [BaselineResult("fom_implicit", fom.wall_time, 0.0, 0.0)]
    if "heun" in opts.integrators:
        out.append(_baseline_row("fom_heun", heun_simulate(x0, grid, PairwiseEvaluator(sys)), ref, sys, length))
    criteria = [(f"bh_theta_{t:g}", BarnesHut(t)) for t in opts.bh_thetas]
    criteria += [(f"bh_nn_{p:g}", Neighbor(p)) for p in opts.nn_widths]
    for name, crit in criteria:
        cap = select_leaf_capacity(x0, sys, crit, opts.leaf_capacities)
        ev = BarnesHutEvaluator(sys, crit, cap)
        if "implicit" in opts.integrators:
            out.append(_baseline_row(f"{name}_implicit", fom_simulate(x0, grid, config.newton, ev), ref, sys, length))
        if "heun" in opts.integrators:
            out.append(_baseline_row(f"{name}_heun", heun_simulate(x0, grid, ev), ref, sys, length))
    if bundle is not None and opts.include_gnat:
        traj, _ = ptrom_simulate(bundle.pod, bundle.gnat, None, sys, grid, config.rom.rom_config())
        X = reconstruct_output(traj.x_hat_history, bundle.pod)
        rep = error_report(ref, X, sys, length)
        out.append(BaselineResult("gnat", traj.wall_time, rep.mean_mae_d, rep.mean_ae_h))
    return out


def run_reproductive_suite(configs: list[ExperimentConfig], root: str | Path, baselines: bool = False) -> list[dict]:
    """Train and replay each single-vortex configuration; optional baseline sweep."""
    root = Path(root)
    rows = []
    for cfg in configs:
        bundle = run_training_pipeline(cfg, persist=True)
        fom = bundle.fom_runs[0]
        q = run_query(cfg, bundle, cfg.training_points()[0], fom=fom)
        row = {
            "n": cfg.n,
            "M": cfg.rom.M,
            "n_clusters": bundle.n_clusters,
            "mean_mae_d": q.report.mean_mae_d,
            "mean_ae_h": q.report.mean_ae_h,
            "t_fom": q.t_fom,
            "t_rom": q.t_rom,
            "speedup": q.speedup,
            "kernel_evals_per_eval": q.kernel_evals_per_step,
            "failed_steps": q.rom_failed,
        }
        if baselines:
            row["baselines"] = [b.__dict__ for b in run_baselines(cfg, bundle, fom)]
        rows.append(row)
    dump_json(root / "reproductive.json", rows)
    return rows


def hamiltonian_history(states: np.ndarray, sys: ParticleSystem) -> np.ndarray:
    return np.array([hamiltonian(states[:, i], sys) for i in range(states.shape[1])])
