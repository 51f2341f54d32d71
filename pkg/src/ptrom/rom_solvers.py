"""Online reduced solvers: LSPG Gauss-Newton and the hyper-reduced GNAT/PTROM loop."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .integrators import TimeGrid, trapezoidal_residual_jacobian
from .io import dump_json, load_json, load_matrix, save_matrix
from .kernel import BlockDiagonalJacobian, FloatArray, ParticleSystem, kernel_sums, pairwise_velocity_and_jacobian
from .reduction import GnatOperator, PODBasis, SurrogateSourceBasis, _sampled_dofs

log = logging.getLogger(__name__)

ConvergenceMeasure = Literal["gnat", "projected"]


@dataclass(frozen=True)
class RomConfig:
    """Gauss-Newton settings.

    ``convergence="gnat"`` measures the gradient of the minimized objective,
    ``(A C)^T A r``; ``"projected"`` uses ``Phi^T J^T r`` on the sampled rows.
    Both are normalized by their value at the first iterate of the step.
    """

    tol: float = 1e-4
    max_iters: int = 100
    alpha: float = 1.0
    convergence: ConvergenceMeasure = "gnat"

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not 0.0 < self.alpha <= 1.0:
            raise ValueError("alpha must lie in (0, 1]")
        if self.convergence not in ("gnat", "projected"):
            raise ValueError(f"unknown convergence measure {self.convergence!r}")


class HyperPair:
    """Velocity at a set of target particles from a reduced state.

    Targets sit at ``x0 + Phi x_hat`` on their own rows. Sources are the
    surrogate's unique clusters plus every particle some target interacts
    with directly; without a surrogate every other particle is a direct
    source (plain GNAT). ``kernel_evals`` counts pair evaluations.
    """

    def __init__(
        self,
        basis: PODBasis,
        sys: ParticleSystem,
        target_ids,
        surrogate: SurrogateSourceBasis | None = None,
    ):
        N = sys.n
        targets = np.asarray(sorted(int(t) for t in target_ids), dtype=np.intp)
        self.sys = sys
        self.target_ids = targets
        self.rows = _sampled_dofs(targets, N)
        self.phi_t = basis.phi[self.rows]
        self.x0_t = basis.x_ref[self.rows]
        nt = targets.size
        if surrogate is None:
            direct = np.arange(N)
            pt = np.repeat(np.arange(nt), N)
            ps = np.tile(np.arange(N), nt)
            keep = ps != targets[pt]
            pt, ps = pt[keep], ps[keep]
            n_cl = 0
            phi_c = np.zeros((0, basis.rank))
            x0_c = np.zeros(0)
            gamma_c = np.zeros(0)
        else:
            if not np.array_equal(surrogate.target_ids, targets):
                raise ValueError("surrogate was built for a different target set")
            direct = surrogate.direct_sources
            n_cl = surrogate.n_clusters
            slot_of = np.full(N, -1, dtype=np.intp)
            slot_of[direct] = np.arange(direct.size)
            pt = np.concatenate([surrogate.cluster_t, surrogate.direct_t])
            ps = np.concatenate([surrogate.cluster_k, n_cl + slot_of[surrogate.direct_p]])
            phi_c, x0_c, gamma_c = surrogate.phi_tilde, surrogate.x0_tilde, surrogate.gamma_tilde
        order = np.argsort(pt, kind="stable")
        self.pair_t, self.pair_s = pt[order], ps[order]
        self.n_clusters = n_cl
        self.direct_ids = direct
        drows = _sampled_dofs(direct, N)
        # source rows, chi block then psi block: clusters first, then direct particles
        self.phi_s = np.vstack([phi_c[:n_cl], basis.phi[drows[: direct.size]], phi_c[n_cl:], basis.phi[drows[direct.size:]]])
        self.x0_s = np.concatenate([x0_c[:n_cl], basis.x_ref[drows[: direct.size]], x0_c[n_cl:], basis.x_ref[drows[direct.size:]]])
        self.gamma_s = np.concatenate([gamma_c, sys.circulation[direct]])
        self.n_sources = n_cl + direct.size
        self.inflow = None if sys.inflow is None else sys.inflow[self.rows]
        self.kernel_evals = 0
        self.calls = 0

    @property
    def n_pairs(self) -> int:
        return self.pair_t.size

    def target_state(self, x_hat: FloatArray) -> FloatArray:
        return self.x0_t + self.phi_t @ x_hat

    def evaluate(self, x_hat: FloatArray, with_jacobian: bool = True):
        """Return ``(target_state, f, jacobian_or_None)`` on the sampled rows."""
        nt = self.target_ids.size
        ns = self.n_sources
        xt = self.target_state(x_hat)
        xs = self.x0_s + self.phi_s @ x_hat
        out = kernel_sums(
            xt[:nt], xt[nt:], xs[:ns], xs[ns:], self.gamma_s, self.sys.offset,
            self.pair_t, self.pair_s, nt, with_jacobian=with_jacobian, coincident="skip",
        )
        f = np.concatenate([out[0], out[1]])
        if self.inflow is not None:
            f += self.inflow
        self.kernel_evals += self.n_pairs
        self.calls += 1
        jac = BlockDiagonalJacobian(*out[2]) if with_jacobian else None
        return xt, f, jac


def hyperpair(
    surrogate: SurrogateSourceBasis | None,
    basis: PODBasis,
    x_hat: FloatArray,
    sys: ParticleSystem,
    sampled_ids,
) -> FloatArray:
    """Sampled velocity ``f`` (rows: chi of each target, then psi)."""
    return HyperPair(basis, sys, sampled_ids, surrogate).evaluate(np.asarray(x_hat, float), False)[1]


class FullStateEvaluator:
    """Exact pairwise velocity of the full reconstructed state (Tier II without clustering)."""

    def __init__(self, basis: PODBasis, sys: ParticleSystem):
        self.basis = basis
        self.sys = sys
        self.target_ids = np.arange(sys.n)
        self.phi_t = basis.phi
        self.kernel_evals = 0
        self.calls = 0

    def target_state(self, x_hat: FloatArray) -> FloatArray:
        return self.basis.expand(x_hat)

    def evaluate(self, x_hat: FloatArray, with_jacobian: bool = True):
        x = self.basis.expand(x_hat)
        f, jac = pairwise_velocity_and_jacobian(x, self.sys)
        self.kernel_evals += self.sys.n * (self.sys.n - 1)
        self.calls += 1
        return x, f, jac if with_jacobian else None


@dataclass
class RomStepResult:
    x_hat: FloatArray
    x_sampled: FloatArray
    f: FloatArray
    iterations: int
    converged: bool
    epsilons: list[float] = field(default_factory=list)


def _lstsq(mat: FloatArray, rhs: FloatArray) -> FloatArray:
    sol, _, rank, _ = np.linalg.lstsq(mat, rhs, rcond=None)
    if rank < mat.shape[1]:
        log.warning("rank-deficient Gauss-Newton system (rank %d of %d)", rank, mat.shape[1])
    return sol


def _gauss_newton_step(
    x_hat_prev: FloatArray,
    x_prev: FloatArray,
    f_prev: FloatArray,
    evaluator,
    dt: float,
    cfg: RomConfig,
    A: FloatArray | None,
    residual_sink: list | None,
) -> RomStepResult:
    """Shared Gauss-Newton loop; ``A=None`` minimizes the plain residual on the evaluator rows."""
    x_hat = x_hat_prev.copy()
    phi = evaluator.phi_t
    eps_hist: list[float] = []
    g0 = None
    k = 0
    while True:
        xs, f, jv = evaluator.evaluate(x_hat, True)
        r = xs - x_prev - 0.5 * dt * (f + f_prev)
        if residual_sink is not None:
            residual_sink.append(r)
        C = trapezoidal_residual_jacobian(jv, dt).rmatmat(phi)
        if A is None:
            lhs, rhs = C, r
            grad = C.T @ r
        else:
            lhs, rhs = A @ C, A @ r
            grad = lhs.T @ rhs if cfg.convergence == "gnat" else C.T @ r
        gnorm = float(np.linalg.norm(grad))
        if g0 is None:
            g0 = gnorm
            if g0 == 0.0:
                eps_hist.append(0.0)
                return RomStepResult(x_hat, xs, f, 1, True, eps_hist)
        eps = gnorm / g0
        eps_hist.append(eps)
        if k > 0 and eps <= cfg.tol:
            return RomStepResult(x_hat, xs, f, k, True, eps_hist)
        if k >= cfg.max_iters:
            return RomStepResult(x_hat, xs, f, k, False, eps_hist)
        x_hat = x_hat + cfg.alpha * _lstsq(lhs, -rhs)
        k += 1


def lspg_step(x_hat_prev, x_prev, f_prev, evaluator, dt, cfg: RomConfig, residual_sink=None) -> RomStepResult:
    """LSPG Gauss-Newton on the full residual (``evaluator`` covers every particle)."""
    return _gauss_newton_step(x_hat_prev, x_prev, f_prev, evaluator, dt, cfg, None, residual_sink)


def gnat_step(x_hat_prev, x_prev, f_prev, evaluator: HyperPair, gnat_op: GnatOperator, dt, cfg: RomConfig) -> RomStepResult:
    """GNAT Gauss-Newton on the sampled residual weighted by ``A = [P Phi_r]^+``."""
    return _gauss_newton_step(x_hat_prev, x_prev, f_prev, evaluator, dt, cfg, gnat_op.A, None)


@dataclass
class RomTrajectory:
    x_hat_history: FloatArray  # (M, n_steps)
    sampled_state_history: FloatArray  # (n_rows, n_steps)
    sampled_rows: FloatArray
    iterations: FloatArray
    converged: FloatArray
    wall_time: float
    dt: float = 0.0
    t0: float = 0.0
    kernel_evals: int = 0

    @property
    def n_steps(self) -> int:
        return self.x_hat_history.shape[1]

    @property
    def n_failed(self) -> int:
        return int(np.sum(~self.converged))

    def save(self, path: str | Path, include_timing: bool = True) -> None:
        path = Path(path)
        save_matrix(path.with_suffix(".xhat.bin"), self.x_hat_history, dt=self.dt, t0=self.t0)
        save_matrix(path.with_suffix(".sampled.bin"), self.sampled_state_history, dt=self.dt, t0=self.t0)
        meta = {
            "sampled_rows": self.sampled_rows.tolist(),
            "iterations": self.iterations.tolist(),
            "converged": self.converged.tolist(),
            "kernel_evals": int(self.kernel_evals),
        }
        if include_timing:
            meta["wall_time"] = self.wall_time
        dump_json(path.with_suffix(".json"), meta)

    @classmethod
    def load(cls, path: str | Path) -> "RomTrajectory":
        path = Path(path)
        xh, m = load_matrix(path.with_suffix(".xhat.bin"))
        ss, _ = load_matrix(path.with_suffix(".sampled.bin"))
        meta = load_json(path.with_suffix(".json"))
        return cls(
            xh, ss, np.array(meta["sampled_rows"], dtype=np.intp),
            np.array(meta["iterations"], dtype=np.int64), np.array(meta["converged"], dtype=bool),
            float(meta.get("wall_time", 0.0)), m["dt"], m["t0"], int(meta["kernel_evals"]),
        )


def _rom_simulate(step, evaluator, basis: PODBasis, grid: TimeGrid, x_hat0=None) -> RomTrajectory:
    M = basis.rank
    x_hat = np.zeros(M) if x_hat0 is None else np.asarray(x_hat0, dtype=np.float64).copy()
    n = grid.n_steps
    xh = np.empty((M, n))
    ss = np.empty((evaluator.phi_t.shape[0], n))
    iters = np.zeros(n, dtype=np.int64)
    conv = np.ones(n, dtype=bool)
    evals0 = evaluator.kernel_evals
    t_start = time.perf_counter()
    x_prev, f_prev, _ = evaluator.evaluate(x_hat, False)
    for i in range(n):
        res = step(x_hat, x_prev, f_prev)
        x_hat, x_prev, f_prev = res.x_hat, res.x_sampled, res.f
        xh[:, i] = x_hat
        ss[:, i] = x_prev
        iters[i] = res.iterations
        conv[i] = res.converged
    wall = time.perf_counter() - t_start
    if not conv.all():
        log.warning("Gauss-Newton hit max_iters on %d of %d steps", int((~conv).sum()), n)
    rows = getattr(evaluator, "rows", np.arange(basis.n_dofs))
    return RomTrajectory(xh, ss, rows, iters, conv, wall, grid.dt, grid.t0, evaluator.kernel_evals - evals0)


def lspg_simulate(
    basis: PODBasis, evaluator, grid: TimeGrid, cfg: RomConfig, residual_sink: list | None = None
) -> RomTrajectory:
    """Tier II trajectory; every Gauss-Newton residual is appended to ``residual_sink``."""
    return _rom_simulate(
        lambda xh, xp, fp: lspg_step(xh, xp, fp, evaluator, grid.dt, cfg, residual_sink),
        evaluator, basis, grid,
    )


def gnat_simulate(
    basis: PODBasis, evaluator: HyperPair, gnat_op: GnatOperator, grid: TimeGrid, cfg: RomConfig
) -> RomTrajectory:
    if not np.array_equal(evaluator.target_ids, gnat_op.sample_ids):
        raise ValueError("evaluator targets differ from the GNAT sample set")
    return _rom_simulate(
        lambda xh, xp, fp: gnat_step(xh, xp, fp, evaluator, gnat_op, grid.dt, cfg),
        evaluator, basis, grid,
    )


def ptrom_simulate(
    basis: PODBasis,
    gnat_op: GnatOperator,
    surrogate: SurrogateSourceBasis | None,
    sys: ParticleSystem,
    grid: TimeGrid,
    cfg: RomConfig,
) -> tuple[RomTrajectory, HyperPair]:
    """Hyper-reduced trajectory for the circulations in ``sys``.

    The surrogate's cluster circulations and rows are re-weighted for
    ``sys.circulation`` before stepping; ``surrogate=None`` runs plain GNAT.
    Timing covers the stepping loop only.
    """
    if surrogate is not None:
        surrogate = surrogate.reassign_circulation(sys.circulation)
    ev = HyperPair(basis, sys, gnat_op.sample_ids, surrogate)
    return gnat_simulate(basis, ev, gnat_op, grid, cfg), ev


def reconstruct_output(x_hat_history: FloatArray, basis: PODBasis, dofs=None) -> FloatArray:
    """``x_ref[dofs] + Phi[dofs] @ x_hat`` for every step (columns).

    Evaluated column by column with the same expression the solvers use, so
    sampled rows reproduce the solver's internal states bit for bit.
    """
    d = np.arange(basis.n_dofs) if dofs is None else np.asarray(dofs, dtype=np.intp)
    if d.size and (d.min() < 0 or d.max() >= basis.n_dofs):
        raise IndexError("requested dof out of range")
    ref, phi = basis.x_ref[d], basis.phi[d]
    out = np.empty((d.size, x_hat_history.shape[1]))
    for i in range(x_hat_history.shape[1]):
        out[:, i] = ref + phi @ x_hat_history[:, i]
    return out
