"""Offline reduction: POD bases, greedy sampling, gappy operator, POD-space clustering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.linalg as sla

from .io import dump_json, load_json, load_matrix, save_matrix
from .kernel import FloatArray
from .quadtree import Criterion, QuadTree, interaction_lists, _cancels


class ReductionError(ValueError):
    """Invalid input to an offline reduction step."""


class RankDeficiencyError(ReductionError):
    pass


def _fix_signs(u: FloatArray) -> FloatArray:
    """Flip columns so each column's largest-magnitude entry is positive."""
    idx = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[idx, np.arange(u.shape[1])])
    signs[signs == 0] = 1.0
    return u * signs


def _numerical_rank(s: FloatArray, shape: tuple[int, int]) -> int:
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps))


@dataclass
class PODBasis:
    """Orthonormal trial basis ``phi`` with affine reference ``x_ref``."""

    phi: FloatArray
    singular_values: FloatArray
    x_ref: FloatArray

    @property
    def n_dofs(self) -> int:
        return self.phi.shape[0]

    @property
    def rank(self) -> int:
        return self.phi.shape[1]

    def expand(self, x_hat: FloatArray) -> FloatArray:
        return self.x_ref + self.phi @ x_hat

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_matrix(path.with_suffix(".phi.bin"), self.phi)
        save_matrix(path.with_suffix(".ref.bin"), self.x_ref)
        save_matrix(path.with_suffix(".sv.bin"), self.singular_values)

    @classmethod
    def load(cls, path: str | Path) -> "PODBasis":
        path = Path(path)
        phi = load_matrix(path.with_suffix(".phi.bin"))[0]
        x_ref = load_matrix(path.with_suffix(".ref.bin"))[0].ravel()
        sv = load_matrix(path.with_suffix(".sv.bin"))[0].ravel()
        return cls(phi, sv, x_ref)


def build_pod(
    snapshots: FloatArray, M: int, x_ref: FloatArray | None = None, subtract_reference: bool = False
) -> PODBasis:
    """POD of a snapshot matrix (columns are states).

    With ``subtract_reference`` the SVD is taken of ``S - x_ref``; otherwise of
    ``S`` itself. ``x_ref`` defaults to zero and becomes the affine offset of
    the trial space.
    """
    S = np.asarray(snapshots, dtype=np.float64)
    if S.ndim != 2 or S.size == 0:
        raise ReductionError("snapshot matrix must be a non-empty 2D array")
    ref = np.zeros(S.shape[0]) if x_ref is None else np.asarray(x_ref, dtype=np.float64).ravel()
    if ref.size != S.shape[0]:
        raise ReductionError("x_ref length must equal the snapshot row count")
    if not 1 <= M <= min(S.shape):
        raise ReductionError(f"M={M} must lie in [1, {min(S.shape)}]")
    data = S - ref[:, None] if subtract_reference else S
    u, s, _ = np.linalg.svd(data, full_matrices=False)
    rank = _numerical_rank(s, S.shape)
    if M > rank:
        raise RankDeficiencyError(f"M={M} exceeds the numerical rank {rank} of the snapshot matrix")
    return PODBasis(phi=_fix_signs(u[:, :M]), singular_values=s[:M].copy(), x_ref=ref)


def weighted_pod_space(basis: PODBasis) -> FloatArray:
    """``Phi @ diag(sigma)`` summed over modes: one pseudo-position per dof."""
    return basis.phi @ basis.singular_values


@dataclass
class ResidualBasis:
    phi_r: FloatArray
    singular_values: FloatArray = field(default_factory=lambda: np.zeros(0))

    @property
    def rank(self) -> int:
        return self.phi_r.shape[1]

    @classmethod
    def from_snapshots(cls, residuals: FloatArray, M_r: int) -> "ResidualBasis":
        pod = build_pod(residuals, M_r)
        return cls(pod.phi, pod.singular_values)


def _sampled_dofs(ids: FloatArray, n: int) -> FloatArray:
    ids = np.asarray(ids, dtype=np.intp)
    return np.concatenate([ids, ids + n])


def greedy_sample(phi_r: FloatArray, n_target: int, preseed=()) -> list[int]:
    """Greedy selection of sample particles from a residual basis.

    Iterations work on groups of basis vectors; later groups use the error of
    their gappy reconstruction from the already-sampled dofs. Each pick is
    the unsampled particle with the largest summed squared entry over both of
    its dofs (lowest index on ties).
    """
    phi = np.asarray(phi_r.phi_r if isinstance(phi_r, ResidualBasis) else phi_r, dtype=np.float64)
    n_dofs, M_r = phi.shape
    if n_dofs % 2:
        raise ReductionError("residual basis must have an even number of rows")
    N = n_dofs // 2
    seeds = sorted({int(p) for p in preseed})
    if n_target > N:
        raise ReductionError(f"n_target={n_target} exceeds the particle count {N}")
    if n_target < len(seeds):
        raise ReductionError("n_target is smaller than the preseed set")
    if any(not 0 <= p < N for p in seeds):
        raise ReductionError("preseed contains out-of-range particle ids")

    sampled = list(seeds)
    mask = np.zeros(N, dtype=bool)
    mask[seeds] = True
    n_a = n_target - len(seeds)
    if n_a == 0:
        return sorted(sampled)

    n_c = min(M_r, 2 * n_target)
    n_it = min(n_c, n_a)
    n_rhs = math.ceil(n_c / n_a)
    n_ci_min = n_c // n_it
    n_ai_min = (n_a * n_rhs) // n_c

    def pick(R: FloatArray) -> None:
        score = np.sum(R[:N] ** 2 + R[N:] ** 2, axis=1)
        score[mask] = -np.inf
        best = int(np.argmax(score))
        mask[best] = True
        sampled.append(best)

    n_b = 0
    R = phi[:, :0]
    for i in range(1, n_it + 1):
        n_ci = n_ci_min + (1 if i <= n_c % n_it else 0)
        n_ai = n_ai_min + (1 if n_rhs == 1 and i <= n_a % n_c else 0)
        block = phi[:, n_b:n_b + n_ci]
        if n_b == 0:
            R = block.copy()
        else:
            rows = _sampled_dofs(sampled, N)
            coef = np.linalg.lstsq(phi[rows, :n_b], block[rows], rcond=None)[0]
            R = block - phi[:, :n_b] @ coef
        for _ in range(n_ai):
            if len(sampled) == n_target:
                break
            pick(R)
        n_b += n_ci
    while len(sampled) < n_target:
        pick(R)
    return sorted(sampled)


@dataclass
class GnatOperator:
    """Sample set and dense ``A = [P Phi_r]^+``.

    ``sampled_dofs`` lists the chi rows of all sampled particles followed by
    their psi rows, which is also the row order expected by ``A``'s columns.
    """

    sample_ids: FloatArray
    sampled_dofs: FloatArray
    A: FloatArray

    @property
    def n_sample(self) -> int:
        return self.sample_ids.size

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_matrix(path.with_suffix(".A.bin"), self.A)
        dump_json(path.with_suffix(".json"), {"sample_ids": self.sample_ids.tolist()})

    @classmethod
    def load(cls, path: str | Path, n_particles: int) -> "GnatOperator":
        path = Path(path)
        ids = np.array(load_json(path.with_suffix(".json"))["sample_ids"], dtype=np.intp)
        return cls(ids, _sampled_dofs(ids, n_particles), load_matrix(path.with_suffix(".A.bin"))[0])


def gnat_operator(phi_r: FloatArray, sample_ids, rank_tol: float = 1e-10) -> GnatOperator:
    """Least-squares pseudo-inverse of the sampled residual basis via pivoted QR."""
    phi = np.asarray(phi_r.phi_r if isinstance(phi_r, ResidualBasis) else phi_r, dtype=np.float64)
    N = phi.shape[0] // 2
    ids = np.array(sorted(int(i) for i in sample_ids), dtype=np.intp)
    if ids.size == 0:
        raise ReductionError("empty sample set")
    rows = _sampled_dofs(ids, N)
    PPhi = phi[rows]
    if PPhi.shape[0] < PPhi.shape[1]:
        raise RankDeficiencyError(
            f"{PPhi.shape[0]} sampled dofs cannot determine {PPhi.shape[1]} residual coefficients"
        )
    Q, R, piv = sla.qr(PPhi, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > rank_tol * diag[0])) if diag.size and diag[0] > 0 else 0
    if rank < PPhi.shape[1]:
        raise RankDeficiencyError(f"sampled residual basis is rank deficient; dependent columns {sorted(piv[rank:].tolist())}")
    A = np.empty((PPhi.shape[1], PPhi.shape[0]))
    A[piv] = sla.solve_triangular(R, Q.T)
    return GnatOperator(ids, rows, A)


# ---------------------------------------------------------------------------
# POD-space clustering


def _segment_means(values: FloatArray, weights: FloatArray, member_ids: FloatArray, member_ptr: FloatArray):
    """Weighted means of ``values`` rows over consecutive member segments."""
    starts = member_ptr[:-1]
    w = weights[member_ids]
    v = values[member_ids]
    if starts.size == 0:
        return np.zeros((0, values.shape[1])), np.zeros(0), np.zeros(0, dtype=bool)
    wsum = np.add.reduceat(w, starts)
    asum = np.add.reduceat(np.abs(w), starts)
    wrow = np.add.reduceat(w[:, None] * v, starts, axis=0)
    urow = np.add.reduceat(v, starts, axis=0)
    count = np.diff(member_ptr).astype(np.float64)
    fallback = np.array([_cancels(a, b) for a, b in zip(wsum, asum)], dtype=bool)
    means = np.where(fallback[:, None], urow / count[:, None], wrow / np.where(fallback, 1.0, wsum)[:, None])
    return means, wsum, fallback


@dataclass
class SurrogateSourceBasis:
    """Deduplicated cluster table plus per-target interaction lists.

    Cluster rows use the state layout: ``phi_tilde[:Nc]`` holds chi rows and
    ``phi_tilde[Nc:]`` psi rows. Pair arrays ``cluster_t/cluster_k`` map target
    slots to unique cluster indices and ``direct_t/direct_p`` target slots to
    original particle ids.
    """

    target_ids: FloatArray
    node_ids: FloatArray
    member_ptr: FloatArray
    member_ids: FloatArray
    cluster_t: FloatArray
    cluster_k: FloatArray
    direct_t: FloatArray
    direct_p: FloatArray
    phi: FloatArray
    x0: FloatArray
    gamma: FloatArray
    phi_tilde: FloatArray = field(init=False)
    x0_tilde: FloatArray = field(init=False)
    gamma_tilde: FloatArray = field(init=False)
    fallback: FloatArray = field(init=False)

    def __post_init__(self):
        self._tabulate()

    def _tabulate(self) -> None:
        N = self.gamma.size
        vals = np.hstack([self.phi[:N], self.phi[N:], self.x0[:N, None], self.x0[N:, None]])
        means, wsum, fb = _segment_means(vals, self.gamma, self.member_ids, self.member_ptr)
        M = self.phi.shape[1]
        self.phi_tilde = np.vstack([means[:, :M], means[:, M:2 * M]])
        self.x0_tilde = np.concatenate([means[:, 2 * M], means[:, 2 * M + 1]])
        self.gamma_tilde = wsum
        self.fallback = fb

    @property
    def n_clusters(self) -> int:
        return self.node_ids.size

    @property
    def n_sources(self) -> int:
        """Rows of the source table: unique clusters plus unique direct (unpruned leaf) particles."""
        return self.n_clusters + np.unique(self.direct_p).size

    @property
    def n_particles(self) -> int:
        return self.gamma.size

    @property
    def direct_sources(self) -> FloatArray:
        return np.unique(self.direct_p)

    def cluster_members(self, k: int) -> FloatArray:
        return self.member_ids[self.member_ptr[k]:self.member_ptr[k + 1]]

    @property
    def cluster_membership(self) -> list[list[int]]:
        return [self.cluster_members(k).tolist() for k in range(self.n_clusters)]

    @property
    def per_target_clusters(self) -> list[list[int]]:
        return [self.cluster_k[self.cluster_t == s].tolist() for s in range(self.target_ids.size)]

    @property
    def per_target_direct(self) -> list[list[int]]:
        return [self.direct_p[self.direct_t == s].tolist() for s in range(self.target_ids.size)]

    def reassign_circulation(self, gamma_mu: FloatArray) -> "SurrogateSourceBasis":
        g = np.asarray(gamma_mu, dtype=np.float64).ravel()
        if g.size != self.n_particles:
            raise ReductionError(f"gamma_mu must have {self.n_particles} entries")
        out = replace(self, gamma=g)
        return out

    def save(self, path: str | Path) -> None:
        path = Path(path)
        save_matrix(path.with_suffix(".phi.bin"), self.phi)
        save_matrix(path.with_suffix(".x0.bin"), self.x0)
        save_matrix(path.with_suffix(".gamma.bin"), self.gamma)
        save_matrix(path.with_suffix(".phi_tilde.bin"), self.phi_tilde)
        index = {
            name: getattr(self, name).tolist()
            for name in (
                "target_ids", "node_ids", "member_ptr", "member_ids",
                "cluster_t", "cluster_k", "direct_t", "direct_p",
            )
        }
        dump_json(path.with_suffix(".json"), index)

    @classmethod
    def load(cls, path: str | Path) -> "SurrogateSourceBasis":
        path = Path(path)
        index = load_json(path.with_suffix(".json"))
        arrays = {k: np.array(v, dtype=np.intp) for k, v in index.items()}
        return cls(
            **arrays,
            phi=load_matrix(path.with_suffix(".phi.bin"))[0],
            x0=load_matrix(path.with_suffix(".x0.bin"))[0].ravel(),
            gamma=load_matrix(path.with_suffix(".gamma.bin"))[0].ravel(),
        )


def reassign_cluster_circulation(surrogate: SurrogateSourceBasis, gamma_mu: FloatArray) -> SurrogateSourceBasis:
    """New surrogate with member-sum circulations and re-weighted cluster rows."""
    return surrogate.reassign_circulation(gamma_mu)


class PodClustering:
    """Tree over the weighted POD space, built once and queried for any target set."""

    def __init__(self, basis: PODBasis, gamma: FloatArray, criterion: Criterion, leaf_capacity: int = 1):
        g = np.asarray(gamma, dtype=np.float64).ravel()
        if 2 * g.size != basis.n_dofs:
            raise ReductionError("gamma length does not match the basis dimension")
        w = weighted_pod_space(basis)
        n = g.size
        self.basis = basis
        self.gamma = g
        self.criterion = criterion
        self.tree = QuadTree(np.column_stack([w[:n], w[n:]]), g, leaf_capacity)

    def surrogate(self, target_ids) -> SurrogateSourceBasis:
        targets = np.asarray(sorted(int(t) for t in target_ids), dtype=np.intp)
        if targets.size == 0:
            raise ReductionError("no target particles given")
        ct, cn, dt_, dp = interaction_lists(self.tree, targets, self.criterion)
        node_ids, ck = np.unique(cn, return_inverse=True)
        sizes = self.tree.end[node_ids] - self.tree.start[node_ids]
        ptr = np.concatenate([[0], np.cumsum(sizes)]).astype(np.intp)
        members = (
            np.concatenate([np.sort(self.tree.members(k)) for k in node_ids]).astype(np.intp)
            if node_ids.size
            else np.zeros(0, np.intp)
        )
        return SurrogateSourceBasis(
            target_ids=targets,
            node_ids=node_ids.astype(np.intp),
            member_ptr=ptr,
            member_ids=members,
            cluster_t=ct,
            cluster_k=ck.astype(np.intp).ravel(),
            direct_t=dt_,
            direct_p=dp,
            phi=self.basis.phi,
            x0=self.basis.x_ref,
            gamma=self.gamma,
        )


def cluster_pod(
    basis: PODBasis,
    gamma: FloatArray,
    x0: FloatArray | None,
    sampled_ids,
    criterion: Criterion,
    leaf_capacity: int = 1,
) -> SurrogateSourceBasis:
    """Agglomerate source POD rows for the given targets (tree built over the weighted POD space)."""
    if x0 is not None:
        basis = replace(basis, x_ref=np.asarray(x0, dtype=np.float64).ravel())
    return PodClustering(basis, gamma, criterion, leaf_capacity).surrogate(sampled_ids)
