"""Experiment configuration and initial-condition generators."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from ..integrators import NewtonConfig, TimeGrid
from ..kernel import ParticleSystem, end_particle_distance, positions_to_state
from ..quadtree import Criterion, parse_criterion
from ..rom_solvers import RomConfig

KINDS = ("vortex_pair", "mushroom", "single_vortex", "custom")


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class RomHyper:
    M: int = 85
    M_r: int = 110
    n_sample: int = 60
    clustering: str = "nn:1"  # "nn:<p_c>", "bh:<theta>" or "none"
    tol: float = 1e-4
    max_iters: int = 100
    alpha: float = 1.0
    convergence: str = "gnat"
    center_snapshots: bool = False
    preseed: list[int] = field(default_factory=list)
    leaf_capacity: int = 1

    def criterion(self) -> Criterion | None:
        return None if self.clustering == "none" else parse_criterion(self.clustering)

    def rom_config(self) -> RomConfig:
        return RomConfig(self.tol, self.max_iters, self.alpha, self.convergence)


@dataclass
class BaselineOptions:
    leaf_capacities: list[int] = field(default_factory=lambda: [0, 50, 75, 100, 125])  # 0 means N
    bh_thetas: list[float] = field(default_factory=lambda: [2.0, 1.0, 0.5])
    nn_widths: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0])
    integrators: list[str] = field(default_factory=lambda: ["implicit", "heun"])
    include_gnat: bool = True


@dataclass
class ExperimentConfig:
    kind: str = "vortex_pair"
    n: int = 500
    dt: float = 0.01
    t_span: tuple[float, float] = (0.0, 5.0)
    delta_k: float | None = None
    desingularization: str = "additive"
    end_position: float | None = None
    background_gamma: float = 0.01
    gamma_center: float = 500.0
    param_bounds: list[list[float]] = field(default_factory=lambda: [[63.75, 255.0], [63.75, 255.0]])
    n_train: int = 4
    train_points: list[list[float]] | None = None
    query_grid: int = 2
    query_points: list[list[float]] | None = None
    newton_tol: float = 1e-8
    newton_max_iters: int = 100
    jacobian_refresh_period: int = 1
    rom: RomHyper = field(default_factory=RomHyper)
    baseline: BaselineOptions = field(default_factory=BaselineOptions)
    seed: int = 0
    output_dir: str = "runs/default"

    def __post_init__(self):
        if isinstance(self.rom, dict):
            self.rom = RomHyper(**self.rom)
        if isinstance(self.baseline, dict):
            self.baseline = BaselineOptions(**self.baseline)
        self.t_span = tuple(float(t) for t in self.t_span)
        self.validate()

    # ------------------------------------------------------------------
    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if self.n < 2:
            raise ConfigError("n must be >= 2")
        if not self.dt > 0:
            raise ConfigError("dt must be positive")
        if not self.t_span[1] > self.t_span[0]:
            raise ConfigError("t_span must be increasing")
        try:
            TimeGrid.from_span(self.t_span[0], self.t_span[1], self.dt)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.delta_k is not None and self.delta_k < 0:
            raise ConfigError("delta_k must be non-negative")
        for lo, hi in self.param_bounds:
            if not hi >= lo:
                raise ConfigError("parameter bounds must satisfy lo <= hi")
        for pts in (self.train_points or [], self.query_points or []):
            for p in pts:
                if not self.in_bounds(p):
                    raise ConfigError(f"parameter point {p} lies outside {self.param_bounds}")
        r = self.rom
        if not (1 <= r.M and 1 <= r.M_r and 1 <= r.n_sample <= self.n):
            raise ConfigError("ROM sizes must be positive and n_sample <= n")
        if 2 * r.n_sample < r.M_r:
            raise ConfigError("need 2 * n_sample >= M_r for an over-determined gappy fit")
        try:
            r.criterion()
            r.rom_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def in_bounds(self, p) -> bool:
        return all(lo - 1e-12 <= v <= hi + 1e-12 for v, (lo, hi) in zip(p, self.param_bounds))

    # ------------------------------------------------------------------
    @property
    def grid(self) -> TimeGrid:
        return TimeGrid.from_span(self.t_span[0], self.t_span[1], self.dt)

    @property
    def newton(self) -> NewtonConfig:
        return NewtonConfig(self.newton_tol, self.newton_max_iters, self.jacobian_refresh_period)

    def training_points(self) -> np.ndarray:
        if self.kind == "single_vortex":
            return np.array([[self.gamma_center]])
        if self.train_points is not None:
            return np.array(self.train_points, dtype=np.float64)
        lo = np.array([b[0] for b in self.param_bounds])
        hi = np.array([b[1] for b in self.param_bounds])
        unit = qmc.LatinHypercube(d=lo.size, seed=self.seed).random(self.n_train)
        return qmc.scale(unit, lo, hi)

    def queries(self) -> np.ndarray:
        if self.kind == "single_vortex":
            return np.array([[self.gamma_center]])
        if self.query_points is not None:
            return np.array(self.query_points, dtype=np.float64)
        axes = [np.linspace(lo, hi, self.query_grid) for lo, hi in self.param_bounds]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])

    # ------------------------------------------------------------------
    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def portable_dict(self) -> dict:
        """Config without ``output_dir`` so run directories are relocatable and comparable."""
        data = self.to_dict()
        data.pop("output_dir")
        return data

    def save(self, path: str | Path) -> None:
        from ..io import dump_json

        dump_json(path, self.portable_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def digest(self) -> str:
        blob = json.dumps(self.portable_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def vortex_pair(n: int = 500, gamma_ends=(255.0, 255.0), end: float = 52.93, background: float = 0.01,
                delta_k: float | None = None, desingularization: str = "additive"):
    line = np.linspace(-end, end, n)
    x0 = np.concatenate([line, line])
    gamma = np.full(n, background)
    gamma[0], gamma[-1] = gamma_ends
    dk = 0.2121 if delta_k is None else delta_k
    return x0, ParticleSystem(gamma, dk, desingularization=desingularization)


def mushroom(n: int = 500, gamma_ends=(-220.0, 220.0), end: float = 37.43, height: float = -10.0,
             background: float = 0.01, delta_k: float | None = None, desingularization: str = "additive"):
    chi = np.linspace(-end, end, n)
    x0 = np.concatenate([chi, np.full(n, height)])
    gamma = np.full(n, background)
    gamma[0], gamma[-1] = gamma_ends
    chi_inf = np.linspace(-1.0, 1.0, n)
    inflow = np.concatenate([np.zeros(n), 5.0 * np.sqrt(1.125**2 - chi_inf**2) + 0.5])
    dk = 0.15 if delta_k is None else delta_k
    return x0, ParticleSystem(gamma, dk, inflow=inflow, desingularization=desingularization)


def single_vortex(n: int = 100, gamma_center: float = 500.0, background: float = 0.01,
                  delta_k: float = 0.0, desingularization: str = "additive"):
    line = np.linspace(-float(n), float(n), n)
    x0 = np.concatenate([line, line])
    gamma = np.full(n, background)
    gamma[n // 2] = gamma_center
    return x0, ParticleSystem(gamma, delta_k, desingularization=desingularization)


def generate_initial_conditions(config: ExperimentConfig, mu=None):
    """``(x0, ParticleSystem)`` for the configured experiment at parameter ``mu``."""
    kw = {"desingularization": config.desingularization}
    if config.kind == "vortex_pair":
        mu = (config.param_bounds[0][1], config.param_bounds[1][1]) if mu is None else mu
        return vortex_pair(config.n, tuple(mu), config.end_position or 52.93, config.background_gamma,
                           config.delta_k, **kw)
    if config.kind == "mushroom":
        mu = (config.param_bounds[0][0], config.param_bounds[1][1]) if mu is None else mu
        return mushroom(config.n, tuple(mu), config.end_position or 37.43, -10.0, config.background_gamma,
                        config.delta_k, **kw)
    if config.kind == "single_vortex":
        gc = config.gamma_center if mu is None else float(np.ravel(mu)[0])
        return single_vortex(config.n, gc, config.background_gamma,
                             0.0 if config.delta_k is None else config.delta_k, **kw)
    raise ConfigError(f"kind {config.kind!r} has no built-in initial-condition generator")


# Reproductive conditions for the single-vortex sweep: N -> (dt, gamma_center, t_final)
REPRODUCTIVE_CONDITIONS = {
    100: (0.01, 500.0, 20.0),
    500: (2.5e-3, 1e4, 5.0),
    1000: (2.5e-4, 1e5, 0.5),
    2000: (1.25e-4, 2e5, 0.25),
    3000: (1e-4, 3e5, 0.2),
    4000: (7.5e-5, 4e5, 0.15),
    5000: (5e-5, 6.75e5, 0.1),
}

# Bases Case 1 narrow neighborhood: N -> (M, p_c)
NARROW_CASE1 = {100: (13, 0.0), 500: (21, 0.0), 1000: (21, 0.0), 2000: (21, 0.0),
                3000: (23, 0.0), 4000: (23, 0.0), 5000: (23, 0.0)}


def single_vortex_config(n: int, M: int | None = None, p_c: float | None = None, tol: float = 1e-1,
                         output_dir: str = "runs/reproductive") -> ExperimentConfig:
    if n not in REPRODUCTIVE_CONDITIONS:
        raise ConfigError(f"no reproductive conditions tabulated for N={n}")
    dt, gc, tf = REPRODUCTIVE_CONDITIONS[n]
    m, p = NARROW_CASE1.get(n, (21, 0.0))
    M = m if M is None else M
    p = p if p_c is None else p_c
    return ExperimentConfig(
        kind="single_vortex", n=n, dt=dt, t_span=(0.0, tf), delta_k=0.0, gamma_center=gc,
        param_bounds=[[gc, gc]], n_train=1,
        # affine trial manifold: with M as small as 13 the raw-snapshot basis spends a mode on the mean
        rom=RomHyper(M=M, M_r=2 * M, n_sample=2 * M, clustering=f"nn:{p:g}", tol=tol, center_snapshots=True),
        output_dir=output_dir,
    )


def characteristic_length(x0) -> float:
    return end_particle_distance(x0)
