"""Quantities of interest, error measures and a posteriori error-bound recursions."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np

from .integrators import MULTISTEP_COEFFICIENTS
from .io import dump_json, save_csv
from .kernel import FloatArray, ParticleSystem, hamiltonian, pairwise_velocity, split


class MetricError(ValueError):
    pass


def ae_hamiltonian(h_fom: float, h_rom: float) -> float:
    """Relative Hamiltonian error ``|H_rom - H_fom| / |H_fom|``."""
    if h_fom == 0.0:
        raise MetricError("relative Hamiltonian error is undefined for H_fom = 0")
    return abs(h_rom - h_fom) / abs(h_fom)


def mae_trajectory(state_fom: FloatArray, state_rom: FloatArray, length: float) -> float:
    """Mean particle displacement error, normalized by ``length``."""
    a = np.asarray(state_fom, dtype=np.float64)
    b = np.asarray(state_rom, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or a.size % 2:
        raise MetricError("states must be equal-length 2N vectors")
    if not length > 0:
        raise MetricError("length must be positive")
    dx, dy = split(a - b)
    return float(np.mean(np.hypot(dx, dy)) / length)


def speedup_factor(t_fom: float, t_rom: float) -> float:
    if not (t_fom > 0 and t_rom > 0):
        raise MetricError("wall times must be positive")
    return t_fom / t_rom


BoundVariant = Literal["stated", "lipschitz"]


def _bound_coefficients(kappa: float, dt: float, alpha, beta, variant: BoundVariant):
    h = abs(alpha[0]) - abs(beta[0]) * kappa * dt
    if not h > 0:
        raise MetricError(f"dt={dt} violates dt < |alpha_0| / (|beta_0| kappa) for kappa={kappa}")
    sign = -1.0 if variant == "stated" else 1.0
    eta = [(abs(a) + sign * abs(b * kappa * dt)) / h for a, b in zip(alpha[1:], beta[1:])]
    return h, eta


def state_error_bound(
    residual_norms: FloatArray,
    kappa: float,
    dt: float,
    alpha=None,
    beta=None,
    delta0: float = 0.0,
    variant: BoundVariant = "stated",
) -> FloatArray:
    """Recursive bound on ``||x^n - x_rom^n||`` for ``n = 1..len(residual_norms)``.

    ``delta^n = ||r^n|| / h + sum_j eta_j delta^{n-j}`` with
    ``h = |alpha_0| - |beta_0| kappa dt``. ``variant="stated"`` uses
    ``eta_j = (|alpha_j| - |beta_j kappa dt|) / h``; ``"lipschitz"`` uses the
    ``+`` sign that follows from the triangle inequality.
    """
    if not kappa > 0:
        raise MetricError("kappa must be positive")
    a0, b0 = MULTISTEP_COEFFICIENTS["trapezoidal"]
    alpha = a0 if alpha is None else tuple(alpha)
    beta = b0 if beta is None else tuple(beta)
    h, eta = _bound_coefficients(kappa, dt, alpha, beta, variant)
    k = len(eta)
    hist = [float(delta0)] * k  # hist[-j] = delta^{n-j}
    out = np.empty(len(residual_norms))
    for n, rn in enumerate(residual_norms):
        d = rn / h + sum(eta[j] * hist[-1 - j] for j in range(k))
        out[n] = d
        hist = (hist + [d])[-k:]
    return out


def qoi_error_bound(residual_norms, kappa: float, kappa_g: float, dt: float, **kwargs) -> FloatArray:
    if kappa_g < 0:
        raise MetricError("kappa_g must be non-negative")
    return kappa_g * state_error_bound(residual_norms, kappa, dt, **kwargs)


def estimate_kappa(fom_states: FloatArray, rom_states: FloatArray, sys: ParticleSystem) -> float:
    """Heuristic Lipschitz constant: max ``||f(x) - f(y)|| / ||x - y||`` over paired columns."""
    best = 0.0
    for x, y in zip(fom_states.T, rom_states.T):
        d = np.linalg.norm(x - y)
        if d > 0:
            best = max(best, np.linalg.norm(pairwise_velocity(x, sys) - pairwise_velocity(y, sys)) / d)
    return best


def full_residual_norms(rom_states: FloatArray, x0: FloatArray, sys: ParticleSystem, dt: float) -> FloatArray:
    """``||r^n||`` of the exact trapezoidal residual along a reconstructed trajectory."""
    prev = np.asarray(x0, dtype=np.float64)
    f_prev = pairwise_velocity(prev, sys)
    out = np.empty(rom_states.shape[1])
    for n in range(rom_states.shape[1]):
        x = rom_states[:, n]
        f = pairwise_velocity(x, sys)
        out[n] = np.linalg.norm(x - prev - 0.5 * dt * (f + f_prev))
        prev, f_prev = x, f
    return out


@dataclass
class ErrorReport:
    ae_h: FloatArray
    mae_d: FloatArray
    length: float
    speedup: float | None = None
    timings: dict = field(default_factory=dict)

    @property
    def mean_ae_h(self) -> float:
        return float(np.mean(self.ae_h)) if self.ae_h.size else 0.0

    @property
    def mean_mae_d(self) -> float:
        return float(np.mean(self.mae_d)) if self.mae_d.size else 0.0

    def to_csv(self, path: str | Path) -> Path:
        steps = np.arange(1, self.ae_h.size + 1)
        return save_csv(path, np.column_stack([steps, self.ae_h, self.mae_d]), header="step,ae_h,mae_d")

    def summary(self, include_timing: bool = True) -> dict:
        out = {"mean_ae_h": self.mean_ae_h, "mean_mae_d": self.mean_mae_d, "length": self.length}
        if include_timing:
            out["speedup"] = self.speedup
            out.update(self.timings)
        return out

    def to_json(self, path: str | Path, include_timing: bool = True) -> Path:
        return dump_json(path, self.summary(include_timing))


def error_report(
    fom_states: FloatArray,
    rom_states: FloatArray,
    sys: ParticleSystem,
    length: float,
    t_fom: float | None = None,
    t_rom: float | None = None,
) -> ErrorReport:
    """Per-step AE_H and MAE_D between two state histories (columns)."""
    if fom_states.shape != rom_states.shape:
        raise MetricError("trajectories differ in shape")
    n = fom_states.shape[1]
    ae = np.array([
        ae_hamiltonian(hamiltonian(fom_states[:, i], sys), hamiltonian(rom_states[:, i], sys)) for i in range(n)
    ])
    md = np.array([mae_trajectory(fom_states[:, i], rom_states[:, i], length) for i in range(n)])
    sf = speedup_factor(t_fom, t_rom) if t_fom and t_rom else None
    timings = {} if t_fom is None else {"t_fom": t_fom, "t_rom": t_rom}
    return ErrorReport(ae, md, length, sf, timings)
