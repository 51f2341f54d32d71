"""Full-order time integration: implicit trapezoidal (inexact Newton) and Heun."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .io import load_matrix, save_csv, save_matrix
from .kernel import (
    BlockDiagonalJacobian,
    FloatArray,
    ParticleSystem,
    pairwise_velocity,
    pairwise_velocity_and_jacobian,
)

log = logging.getLogger(__name__)

# (alpha_0 .. alpha_k), (beta_0 .. beta_k) for k-step linear multistep residuals
MULTISTEP_COEFFICIENTS: dict[str, tuple[tuple[float, ...], tuple[float, ...]]] = {
    "trapezoidal": ((1.0, -1.0), (0.5, 0.5)),
}


class IntegrationError(RuntimeError):
    """A time step could not be completed."""


class VelocityEvaluator(Protocol):
    def velocity(self, x: FloatArray) -> FloatArray: ...

    def velocity_and_jacobian(self, x: FloatArray) -> tuple[FloatArray, BlockDiagonalJacobian]: ...


class PairwiseEvaluator:
    """Naive O(N^2) evaluator."""

    def __init__(self, sys: ParticleSystem):
        self.sys = sys
        self.calls = 0

    def velocity(self, x: FloatArray) -> FloatArray:
        self.calls += 1
        return pairwise_velocity(x, self.sys)

    def velocity_and_jacobian(self, x: FloatArray) -> tuple[FloatArray, BlockDiagonalJacobian]:
        self.calls += 1
        return pairwise_velocity_and_jacobian(x, self.sys)


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError("dt must be positive")
        if self.n_steps < 0:
            raise ValueError("n_steps must be non-negative")

    @classmethod
    def from_span(cls, t0: float, t_final: float, dt: float) -> "TimeGrid":
        n = int(round((t_final - t0) / dt))
        if not np.isclose(t0 + n * dt, t_final, rtol=1e-9, atol=1e-12):
            raise ValueError(f"dt={dt} does not divide [{t0}, {t_final}]")
        return cls(dt=dt, n_steps=n, t0=t0)

    @property
    def t_final(self) -> float:
        return self.t0 + self.n_steps * self.dt

    def times(self) -> FloatArray:
        return self.t0 + self.dt * np.arange(1, self.n_steps + 1)


@dataclass(frozen=True)
class NewtonConfig:
    tol: float = 1e-8
    max_iters: int = 100
    jacobian_refresh_period: int = 1

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.jacobian_refresh_period < 1:
            raise ValueError("jacobian_refresh_period must be >= 1")


@dataclass
class SnapshotMatrix:
    """Time-ordered state snapshots, one column per step (``x^1 .. x^Nt``)."""

    columns: FloatArray
    dt: float = 0.0
    t0: float = 0.0

    @property
    def n_dofs(self) -> int:
        return self.columns.shape[0]

    @property
    def n_steps(self) -> int:
        return self.columns.shape[1]

    def save(self, path: str | Path) -> Path:
        return save_matrix(path, self.columns, dt=self.dt, t0=self.t0)

    @classmethod
    def load(cls, path: str | Path) -> "SnapshotMatrix":
        mat, meta = load_matrix(path)
        return cls(columns=mat, dt=meta["dt"], t0=meta["t0"])

    def to_csv(self, path: str | Path) -> Path:
        n = self.n_dofs // 2
        header = ",".join([f"chi_{i}" for i in range(n)] + [f"psi_{i}" for i in range(n)])
        return save_csv(path, self.columns.T, header=header)


def trapezoidal_residual(
    xi: FloatArray, x_prev: FloatArray, f_prev: FloatArray, f_xi: FloatArray, dt: float
) -> FloatArray:
    if not (xi.shape == x_prev.shape == f_prev.shape == f_xi.shape):
        raise ValueError("residual inputs must share one shape")
    return xi - x_prev - 0.5 * dt * (f_xi + f_prev)


def multistep_residual(
    xi: FloatArray,
    f_xi: FloatArray,
    history_x: list[FloatArray],
    history_f: list[FloatArray],
    dt: float,
    scheme: str = "trapezoidal",
) -> FloatArray:
    """General k-step residual; ``history_*[j-1]`` holds level ``n - j``."""
    alpha, beta = MULTISTEP_COEFFICIENTS[scheme]
    r = alpha[0] * xi - dt * beta[0] * f_xi
    for j in range(1, len(alpha)):
        r = r + alpha[j] * history_x[j - 1] - dt * beta[j] * history_f[j - 1]
    return r


def trapezoidal_residual_jacobian(jvel: BlockDiagonalJacobian, dt: float) -> BlockDiagonalJacobian:
    """``I - dt/2 * J_vel`` in the same block-diagonal representation."""
    h = 0.5 * dt
    return BlockDiagonalJacobian(
        uu=1.0 - h * jvel.uu, uv=-h * jvel.uv, vu=-h * jvel.vu, vv=1.0 - h * jvel.vv
    )


class BlockInverse:
    """Exact inverse of a block-diagonal 2x2-per-particle operator."""

    def __init__(self, jac: BlockDiagonalJacobian):
        det = jac.uu * jac.vv - jac.uv * jac.vu
        scale = np.maximum.reduce([np.abs(jac.uu), np.abs(jac.uv), np.abs(jac.vu), np.abs(jac.vv)])
        bad = np.abs(det) <= 1e-14 * np.maximum(scale * scale, 1e-300)
        if np.any(bad):
            ids = np.flatnonzero(bad)
            raise IntegrationError(f"singular 2x2 Jacobian block for particles {ids[:10].tolist()}")
        self.a = jac.vv / det
        self.b = -jac.uv / det
        self.c = -jac.vu / det
        self.d = jac.uu / det

    def solve(self, rhs: FloatArray) -> FloatArray:
        n = self.a.size
        p, q = rhs[:n], rhs[n:]
        return np.concatenate([self.a * p + self.b * q, self.c * p + self.d * q])


@dataclass
class StepResult:
    x: FloatArray
    f: FloatArray
    iterations: int
    converged: bool
    residual_norms: list[float] = field(default_factory=list)

    @property
    def monotone(self) -> bool:
        r = self.residual_norms
        return all(b <= a for a, b in zip(r, r[1:]))


def fom_step(
    x_prev: FloatArray,
    dt: float,
    cfg: NewtonConfig,
    evaluator: VelocityEvaluator,
    f_prev: FloatArray | None = None,
    jacobian: BlockInverse | None = None,
) -> tuple[StepResult, BlockInverse]:
    """One implicit trapezoidal step solved by inexact Newton.

    ``jacobian`` is a reusable factorization of ``I - dt/2 J_vel``; when
    omitted it is built at ``x_prev``. Returns the step result and the
    factorization used, so callers can reuse it across steps.
    """
    if jacobian is None:
        f0, jvel = evaluator.velocity_and_jacobian(x_prev)
        jacobian = BlockInverse(trapezoidal_residual_jacobian(jvel, dt))
        if f_prev is None:
            f_prev = f0
    elif f_prev is None:
        f_prev = evaluator.velocity(x_prev)
    # initial guess x_prev, so f(xi) == f_prev at the first iterate
    xi = x_prev.copy()
    f_xi = f_prev
    r = trapezoidal_residual(xi, x_prev, f_prev, f_xi, dt)
    r0 = float(np.linalg.norm(r))
    norms = [r0]
    if r0 == 0.0:
        return StepResult(xi, f_xi, 0, True, norms), jacobian
    converged = False
    k = 0
    while k < cfg.max_iters:
        xi = xi - jacobian.solve(r)
        f_xi = evaluator.velocity(xi)
        r = trapezoidal_residual(xi, x_prev, f_prev, f_xi, dt)
        k += 1
        norms.append(float(np.linalg.norm(r)))
        if norms[-1] <= cfg.tol * r0:
            converged = True
            break
    return StepResult(xi, f_xi, k, converged, norms), jacobian


@dataclass
class FomResult:
    snapshots: SnapshotMatrix
    wall_time: float
    iterations: FloatArray
    converged: FloatArray
    monotone: FloatArray

    @property
    def n_failed(self) -> int:
        return int(np.sum(~self.converged))


def fom_simulate(
    x0: FloatArray,
    grid: TimeGrid,
    cfg: NewtonConfig,
    evaluator: VelocityEvaluator,
) -> FomResult:
    """Implicit trapezoidal trajectory; ``wall_time`` covers the stepping loop only."""
    x = np.asarray(x0, dtype=np.float64).copy()
    cols = np.empty((x.size, grid.n_steps))
    iters = np.zeros(grid.n_steps, dtype=np.int64)
    conv = np.ones(grid.n_steps, dtype=bool)
    mono = np.ones(grid.n_steps, dtype=bool)
    jac = None
    t_start = time.perf_counter()
    f = evaluator.velocity(x)
    for n in range(grid.n_steps):
        if n % cfg.jacobian_refresh_period == 0:
            jac = None
        res, jac = fom_step(x, grid.dt, cfg, evaluator, f_prev=f, jacobian=jac)
        x, f = res.x, res.f
        cols[:, n] = x
        iters[n] = res.iterations
        conv[n] = res.converged
        mono[n] = res.monotone
    wall = time.perf_counter() - t_start
    if not conv.all():
        log.warning("inexact Newton hit max_iters on %d of %d steps", int((~conv).sum()), grid.n_steps)
    return FomResult(SnapshotMatrix(cols, grid.dt, grid.t0), wall, iters, conv, mono)


def heun_step(
    x_prev: FloatArray, dt: float, evaluator: VelocityEvaluator, f_prev: FloatArray | None = None
) -> FloatArray:
    f0 = evaluator.velocity(x_prev) if f_prev is None else f_prev
    x_star = x_prev + dt * f0
    return x_prev + 0.5 * dt * (f0 + evaluator.velocity(x_star))


def heun_simulate(x0: FloatArray, grid: TimeGrid, evaluator: VelocityEvaluator) -> FomResult:
    x = np.asarray(x0, dtype=np.float64).copy()
    cols = np.empty((x.size, grid.n_steps))
    t_start = time.perf_counter()
    for n in range(grid.n_steps):
        x = heun_step(x, grid.dt, evaluator)
        cols[:, n] = x
    wall = time.perf_counter() - t_start
    ones = np.ones(grid.n_steps, dtype=bool)
    return FomResult(SnapshotMatrix(cols, grid.dt, grid.t0), wall, np.zeros(grid.n_steps, np.int64), ones, ones)
