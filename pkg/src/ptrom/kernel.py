"""2D Biot-Savart pairwise kernel, inexact self-Jacobian and Hamiltonian.

State layout used throughout the package: a state vector ``x`` of length
``2N`` stores ``[chi_1 .. chi_N, psi_1 .. psi_N]``, so particle ``i`` owns
entries ``i`` and ``i + N``. Velocity vectors use the same layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from . import _accel

FloatArray = NDArray[np.float64]

TWO_PI = 2.0 * np.pi

Desingularization = Literal["additive", "scaled"]


class KernelError(ValueError):
    """Invalid kernel input."""


class SingularityError(KernelError):
    """Coincident target and source with no de-singularization."""


def _denominator_offset(delta_k: float, form: Desingularization) -> float:
    # kernel = gamma * (e3 x r) / (2 pi |r|^2 + offset)
    if form == "additive":
        return TWO_PI * delta_k
    if form == "scaled":
        return delta_k
    raise KernelError(f"unknown de-singularization form {form!r}")


@dataclass
class ParticleSystem:
    """Circulations and kernel constants of an N-vortex system.

    ``desingularization="additive"`` gives ``Gamma/(2 pi) (e3 x r)/(|r|^2 + delta_k)``;
    ``"scaled"`` gives ``Gamma (e3 x r)/(2 pi |r|^2 + delta_k)``.
    """

    circulation: FloatArray
    delta_k: float = 0.0
    inflow: FloatArray | None = None
    desingularization: Desingularization = "additive"
    n: int = field(init=False)

    def __post_init__(self) -> None:
        self.circulation = np.asarray(self.circulation, dtype=np.float64).ravel()
        self.n = int(self.circulation.size)
        if self.n < 2:
            raise KernelError("a particle system needs at least two particles")
        if not np.all(np.isfinite(self.circulation)):
            raise KernelError("circulation contains non-finite values")
        if not (np.isfinite(self.delta_k) and self.delta_k >= 0.0):
            raise KernelError("delta_k must be finite and non-negative")
        if self.inflow is not None:
            self.inflow = np.asarray(self.inflow, dtype=np.float64).ravel()
            if self.inflow.size != 2 * self.n:
                raise KernelError(f"inflow must have {2 * self.n} entries, got {self.inflow.size}")
        _denominator_offset(self.delta_k, self.desingularization)

    @property
    def offset(self) -> float:
        return _denominator_offset(self.delta_k, self.desingularization)

    def with_circulation(self, circulation: FloatArray) -> "ParticleSystem":
        return ParticleSystem(
            circulation=circulation,
            delta_k=self.delta_k,
            inflow=self.inflow,
            desingularization=self.desingularization,
        )


@dataclass
class BlockDiagonalJacobian:
    """Per-particle 2x2 self-derivative blocks of the velocity field.

    ``uu[i] = d f_i / d x_i``, ``uv[i] = d f_i / d x_{i+N}``,
    ``vu[i] = d f_{i+N} / d x_i``, ``vv[i] = d f_{i+N} / d x_{i+N}``.
    Cross-particle derivatives are taken to be zero.
    """

    uu: FloatArray
    uv: FloatArray
    vu: FloatArray
    vv: FloatArray

    @property
    def n(self) -> int:
        return self.uu.size

    def dense(self) -> FloatArray:
        n = self.n
        out = np.zeros((2 * n, 2 * n))
        idx = np.arange(n)
        out[idx, idx] = self.uu
        out[idx, idx + n] = self.uv
        out[idx + n, idx] = self.vu
        out[idx + n, idx + n] = self.vv
        return out

    def matvec(self, v: FloatArray) -> FloatArray:
        n = self.n
        a, b = v[:n], v[n:]
        return np.concatenate([self.uu * a + self.uv * b, self.vu * a + self.vv * b])

    def rmatmat(self, mat: FloatArray) -> FloatArray:
        """Left-multiply a ``(2N, k)`` matrix by this operator."""
        n = self.n
        top, bot = mat[:n], mat[n:]
        return np.vstack(
            [self.uu[:, None] * top + self.uv[:, None] * bot,
             self.vu[:, None] * top + self.vv[:, None] * bot]
        )


def split(x: FloatArray) -> tuple[FloatArray, FloatArray]:
    n = x.size // 2
    return x[:n], x[n:]


def positions_to_state(points: FloatArray) -> FloatArray:
    """``(N, 2)`` positions to a ``2N`` state vector."""
    pts = np.asarray(points, dtype=np.float64)
    return np.concatenate([pts[:, 0], pts[:, 1]])


def state_to_positions(x: FloatArray) -> FloatArray:
    chi, psi = split(np.asarray(x, dtype=np.float64))
    return np.column_stack([chi, psi])


def _check_state(x: FloatArray, sys: ParticleSystem) -> FloatArray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (2 * sys.n,):
        raise KernelError(f"state must have shape ({2 * sys.n},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise KernelError("state contains non-finite values")
    return x


def kernel_pair(
    target: FloatArray,
    source: FloatArray,
    gamma_j: float,
    delta_k: float,
    desingularization: Desingularization = "additive",
) -> FloatArray:
    """Velocity induced at ``target`` by a point vortex at ``source``."""
    t = np.asarray(target, dtype=np.float64)
    s = np.asarray(source, dtype=np.float64)
    if not (np.all(np.isfinite(t)) and np.all(np.isfinite(s)) and np.isfinite(gamma_j)):
        raise KernelError("non-finite kernel input")
    if not (np.isfinite(delta_k) and delta_k >= 0.0):
        raise KernelError("delta_k must be finite and non-negative")
    rx, ry = t[0] - s[0], t[1] - s[1]
    den = TWO_PI * (rx * rx + ry * ry) + _denominator_offset(delta_k, desingularization)
    if den == 0.0:
        raise SingularityError("coincident target and source with delta_k = 0")
    return np.array([-gamma_j * ry / den, gamma_j * rx / den])


def kernel_sums(
    tx: FloatArray,
    ty: FloatArray,
    sx: FloatArray,
    sy: FloatArray,
    gamma: FloatArray,
    offset: float,
    pair_target: NDArray[np.intp],
    pair_source: NDArray[np.intp],
    n_targets: int,
    with_jacobian: bool = False,
    coincident: Literal["raise", "skip"] = "raise",
):
    """Sum kernel contributions over an explicit list of (target, source) pairs.

    Returns ``(u, v)`` per target and, if requested, the four self-block
    diagonals ``(uu, uv, vu, vv)``. With ``coincident="skip"`` an exactly
    coincident pair at ``delta_k = 0`` contributes nothing instead of raising.
    """
    rx = tx[pair_target] - sx[pair_source]
    ry = ty[pair_target] - sy[pair_source]
    den = TWO_PI * (rx * rx + ry * ry) + offset
    zero = den == 0.0
    if np.any(zero):
        if coincident != "skip":
            raise SingularityError("coincident target and source with delta_k = 0")
        den = np.where(zero, np.inf, den)
    g = gamma[pair_source] / den
    u = np.bincount(pair_target, weights=-g * ry, minlength=n_targets)
    v = np.bincount(pair_target, weights=g * rx, minlength=n_targets)
    if not with_jacobian:
        return u, v
    gd = g / den
    four_pi = 2.0 * TWO_PI
    uu = np.bincount(pair_target, weights=four_pi * gd * rx * ry, minlength=n_targets)
    uv = np.bincount(pair_target, weights=four_pi * gd * ry * ry - g, minlength=n_targets)
    vu = np.bincount(pair_target, weights=g - four_pi * gd * rx * rx, minlength=n_targets)
    return u, v, (uu, uv, vu, -uu)


def _pair_geometry(x: FloatArray, sys: ParticleSystem):
    chi, psi = split(x)
    rx = chi[:, None] - chi[None, :]
    ry = psi[:, None] - psi[None, :]
    den = TWO_PI * (rx * rx + ry * ry) + sys.offset
    np.fill_diagonal(den, np.inf)
    if np.any(den == 0.0):
        raise SingularityError("coincident particles with delta_k = 0")
    return rx, ry, den


def _pairwise_numpy(x: FloatArray, sys: ParticleSystem, with_jacobian: bool):
    rx, ry, den = _pair_geometry(x, sys)
    w = sys.circulation[None, :] / den
    u, v = -(w * ry).sum(axis=1), (w * rx).sum(axis=1)
    if not with_jacobian:
        return u, v, None
    wd = w / den
    four_pi = 2.0 * TWO_PI
    uu = (four_pi * wd * rx * ry).sum(axis=1)
    uv = (four_pi * wd * ry * ry - w).sum(axis=1)
    vu = (w - four_pi * wd * rx * rx).sum(axis=1)
    return u, v, (uu, uv, vu)


def _pairwise(x: FloatArray, sys: ParticleSystem, with_jacobian: bool):
    x = _check_state(x, sys)
    if _accel.pairwise_sums is None:
        u, v, jac = _pairwise_numpy(x, sys, with_jacobian)
    else:
        chi, psi = split(x)
        u, v, uu, uv, vu, ok = _accel.pairwise_sums(
            np.ascontiguousarray(chi), np.ascontiguousarray(psi), sys.circulation, sys.offset, with_jacobian
        )
        if not ok:
            raise SingularityError("coincident particles with delta_k = 0")
        jac = (uu, uv, vu)
    f = np.concatenate([u, v])
    if sys.inflow is not None:
        f += sys.inflow
    return f, jac


def pairwise_velocity(x: FloatArray, sys: ParticleSystem) -> FloatArray:
    """Exact O(N^2) induced velocity of every particle, plus inflow.

    Sources are summed in ascending index order for every target.
    """
    return _pairwise(x, sys, False)[0]


def inexact_kernel_jacobian(x: FloatArray, sys: ParticleSystem) -> BlockDiagonalJacobian:
    """Derivative of each particle's velocity w.r.t. its own position, sources frozen."""
    return pairwise_velocity_and_jacobian(x, sys)[1]


def pairwise_velocity_and_jacobian(
    x: FloatArray, sys: ParticleSystem
) -> tuple[FloatArray, BlockDiagonalJacobian]:
    f, (uu, uv, vu) = _pairwise(x, sys, True)
    return f, BlockDiagonalJacobian(uu=uu, uv=uv, vu=vu, vv=-uu)


def kernel_matrix(x: FloatArray, sys: ParticleSystem) -> tuple[FloatArray, FloatArray]:
    """Explicit block form: returns ``(K, gamma_vec)`` with ``f = K @ gamma_vec`` (no inflow).

    ``K`` is block diagonal with the chi-components of the per-pair kernels in
    the upper-left block and the psi-components in the lower-right block;
    ``gamma_vec = [Gamma, Gamma] / (2 pi)``. Only valid for the additive form.
    """
    if sys.desingularization != "additive":
        raise KernelError("block-matrix form is defined for the additive kernel only")
    x = _check_state(x, sys)
    n = sys.n
    chi, psi = split(x)
    k = np.zeros((2 * n, 2 * n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            rx, ry = chi[i] - chi[j], psi[i] - psi[j]
            d = rx * rx + ry * ry + sys.delta_k
            if d == 0.0:
                raise SingularityError("coincident particles with delta_k = 0")
            k[i, j] = -ry / d
            k[n + i, n + j] = rx / d
    gamma_vec = np.concatenate([sys.circulation, sys.circulation]) / TWO_PI
    return k, gamma_vec


def hamiltonian(x: FloatArray, sys: ParticleSystem) -> float:
    """Log-interaction energy; each unordered pair counted twice, no delta_k."""
    x = _check_state(x, sys)
    chi, psi = split(x)
    g = sys.circulation
    if _accel.log_energy is not None:
        total, ok = _accel.log_energy(np.ascontiguousarray(chi), np.ascontiguousarray(psi), g)
    else:
        iu, ju = np.triu_indices(sys.n, k=1)
        d2 = (chi[iu] - chi[ju]) ** 2 + (psi[iu] - psi[ju]) ** 2
        ok = not np.any(d2 == 0.0)
        total = np.sum(g[iu] * g[ju] * np.log(d2)) if ok else 0.0
    if not ok:
        raise SingularityError("coincident particles: Hamiltonian undefined")
    # 0.5 * log(d^2) = log(d); pairs doubled => factor 2 * 0.5
    return float(total / (4.0 * np.pi))


def velocity_at_points(
    points: FloatArray, x: FloatArray, sys: ParticleSystem
) -> FloatArray:
    """Velocity induced by all particles at arbitrary ``(P, 2)`` query points (no inflow)."""
    x = _check_state(x, sys)
    pts = np.asarray(points, dtype=np.float64)
    chi, psi = split(x)
    rx = pts[:, 0:1] - chi[None, :]
    ry = pts[:, 1:2] - psi[None, :]
    den = TWO_PI * (rx * rx + ry * ry) + sys.offset
    if np.any(den == 0.0):
        raise SingularityError("grid vertex coincides with a particle and delta_k = 0")
    w = sys.circulation[None, :] / den
    return np.column_stack([-(w * ry).sum(axis=1), (w * rx).sum(axis=1)])


@dataclass
class GridSpec:
    """Rectangular lattice ``[xmin, xmax] x [ymin, ymax]`` with ``nx * ny`` vertices."""

    xmin: float
    xmax: float
    ymin: float
    ymax: float
    nx: int
    ny: int

    def vertices(self) -> tuple[FloatArray, FloatArray]:
        gx = np.linspace(self.xmin, self.xmax, self.nx)
        gy = np.linspace(self.ymin, self.ymax, self.ny)
        return np.meshgrid(gx, gy, indexing="xy")


def end_particle_distance(x0: FloatArray) -> float:
    chi, psi = split(np.asarray(x0, dtype=np.float64))
    return float(np.hypot(chi[-1] - chi[0], psi[-1] - psi[0]))


def velocity_field_grid(
    x: FloatArray,
    sys: ParticleSystem,
    grid: GridSpec,
    c_g: float,
    gamma_bar: float,
    length: float,
) -> FloatArray:
    """Non-dimensional speed ``|f| * c_g * length / gamma_bar`` on a lattice, shape ``(ny, nx)``.

    ``length`` is the characteristic length (initial end-particle distance).
    """
    if gamma_bar <= 0.0 or c_g <= 0.0 or length <= 0.0:
        raise KernelError("gamma_bar, c_g and length must be positive")
    gx, gy = grid.vertices()
    vel = velocity_at_points(np.column_stack([gx.ravel(), gy.ravel()]), x, sys)
    speed = np.hypot(vel[:, 0], vel[:, 1])
    return (speed * c_g * length / gamma_bar).reshape(gx.shape)
