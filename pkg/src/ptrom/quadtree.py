"""Barnes-Hut quadtree, pruning criteria and clustered velocity summation.

The tree is stored as flat arrays. Every node covers a contiguous slice
``perm[start:end]`` of a permutation of the particle ids, so membership
queries are O(1). Node ids are assigned breadth-first; children of a node
are ordered SW, SE, NW, NE and empty quadrants are not materialized.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .kernel import (
    BlockDiagonalJacobian,
    FloatArray,
    KernelError,
    ParticleSystem,
    kernel_sums,
    split,
)

MAX_DEPTH = 64


@dataclass(frozen=True)
class BarnesHut:
    theta: float

    def __post_init__(self):
        if not self.theta >= 0.0:
            raise ValueError("theta must be >= 0")


@dataclass(frozen=True)
class Neighbor:
    p_c: float

    def __post_init__(self):
        if not self.p_c >= 0.0:
            raise ValueError("p_c must be >= 0")


Criterion = Union[BarnesHut, Neighbor]


def parse_criterion(spec: str) -> Criterion:
    """``"bh:0.5"`` or ``"nn:1"``."""
    kind, _, value = spec.partition(":")
    if kind in ("bh", "barnes_hut"):
        return BarnesHut(float(value))
    if kind in ("nn", "neighbor"):
        return Neighbor(float(value))
    raise ValueError(f"unknown clustering criterion {spec!r}")


@dataclass(frozen=True)
class TreeNode:
    node_id: int
    bounds: tuple[float, float, float, float]
    width: float
    children: tuple[int, ...]
    particle_ids: tuple[int, ...]
    centroid: tuple[float, float]
    gamma_sum: float

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass
class ClusterList:
    pruned_node_ids: list[int]
    direct_ids: list[int]


def weighted_mean_rows(values: FloatArray, weights: FloatArray) -> tuple[FloatArray, bool]:
    """Weighted mean of rows; falls back to the arithmetic mean when the weights cancel."""
    wsum = weights.sum()
    if _cancels(wsum, np.abs(weights).sum()):
        return values.mean(axis=0), True
    return (weights @ values) / wsum, False


def _cancels(total: float, abs_total: float) -> bool:
    return abs(total) <= 1e-13 * abs_total or total == 0.0


class QuadTree:
    """Hierarchical decomposition of a 2D point set.

    Parameters
    ----------
    points : (N, 2) array
    gamma : (N,) array
        Weights for centroids (circulations).
    leaf_capacity : int
        Maximum particles per leaf, except at ``MAX_DEPTH`` where coincident
        points are left in one oversized leaf.
    """

    def __init__(self, points: FloatArray, gamma: FloatArray, leaf_capacity: int = 1):
        pts = np.asarray(points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 1:
            raise ValueError("points must have shape (N, 2) with N >= 1")
        if not np.all(np.isfinite(pts)):
            raise ValueError("points contain non-finite values")
        if leaf_capacity < 1:
            raise ValueError("leaf_capacity must be >= 1")
        g = np.asarray(gamma, dtype=np.float64).ravel()
        if g.size != pts.shape[0]:
            raise ValueError("gamma must have one entry per point")
        self.points = pts
        self.gamma = g
        self.leaf_capacity = int(leaf_capacity)
        self._build()

    # construction -----------------------------------------------------------------
    def _build(self) -> None:
        pts = self.points
        n = pts.shape[0]
        lo = pts.min(axis=0)
        hi = pts.max(axis=0)
        side = float(np.max(hi - lo))
        if side == 0.0:
            side = 1.0
        c = 0.5 * (lo + hi)
        root_bounds = (c[0] - 0.5 * side, c[0] + 0.5 * side, c[1] - 0.5 * side, c[1] + 0.5 * side)

        perm = np.arange(n)
        starts, ends, bounds, depth, parent = [0], [n], [root_bounds], [0], [-1]
        children: list[tuple[int, ...]] = []
        i = 0
        while i < len(starts):
            s, e = starts[i], ends[i]
            if e - s <= self.leaf_capacity or depth[i] >= MAX_DEPTH:
                children.append(())
                i += 1
                continue
            xmin, xmax, ymin, ymax = bounds[i]
            mx, my = 0.5 * (xmin + xmax), 0.5 * (ymin + ymax)
            ids = perm[s:e].copy()
            px, py = pts[ids, 0], pts[ids, 1]
            left, low = px <= mx, py <= my
            quads = (
                (left & low, (xmin, mx, ymin, my)),
                (~left & low, (mx, xmax, ymin, my)),
                (left & ~low, (xmin, mx, my, ymax)),
                (~left & ~low, (mx, xmax, my, ymax)),
            )
            kids = []
            pos = s
            for mask, b in quads:
                sub = ids[mask]
                if sub.size == 0:
                    continue
                perm[pos:pos + sub.size] = sub
                kids.append(len(starts))
                starts.append(pos)
                ends.append(pos + sub.size)
                bounds.append(b)
                depth.append(depth[i] + 1)
                parent.append(i)
                pos += sub.size
            children.append(tuple(kids))
            i += 1

        self.perm = perm
        self.start = np.array(starts, dtype=np.intp)
        self.end = np.array(ends, dtype=np.intp)
        self.bounds = np.array(bounds, dtype=np.float64)
        self.width = np.maximum(self.bounds[:, 1] - self.bounds[:, 0], self.bounds[:, 3] - self.bounds[:, 2])
        self.depth = np.array(depth, dtype=np.intp)
        self.parent = np.array(parent, dtype=np.intp)
        self.children = children
        self.is_leaf = np.array([not k for k in children], dtype=bool)
        self.rank = np.empty(n, dtype=np.intp)
        self.rank[perm] = np.arange(n)
        self.leaf_of = np.empty(n, dtype=np.intp)
        for node in np.flatnonzero(self.is_leaf):
            self.leaf_of[perm[self.start[node]:self.end[node]]] = node
        sums, self.gamma_sum, self.fallback = self.aggregate(self.points, self.gamma)
        self.centroid = sums

    @property
    def n_nodes(self) -> int:
        return self.start.size

    @property
    def n_points(self) -> int:
        return self.points.shape[0]

    def members(self, node: int) -> FloatArray:
        return self.perm[self.start[node]:self.end[node]]

    def contains(self, node: int, particle: int) -> bool:
        r = self.rank[particle]
        return bool(self.start[node] <= r < self.end[node])

    def aggregate(self, values: FloatArray, weights: FloatArray) -> tuple[FloatArray, FloatArray, FloatArray]:
        """Bottom-up weighted means of per-particle rows for every node.

        Returns ``(means (n_nodes, k), weight_sums (n_nodes,), fallback mask)``;
        nodes whose weights cancel use the arithmetic mean of their members.
        """
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim == 1:
            vals = vals[:, None]
        w = np.asarray(weights, dtype=np.float64)
        nn = self.n_nodes
        wsum = np.zeros(nn)
        asum = np.zeros(nn)
        wrow = np.zeros((nn, vals.shape[1]))
        urow = np.zeros((nn, vals.shape[1]))
        count = (self.end - self.start).astype(np.float64)
        for node in range(nn - 1, -1, -1):
            kids = self.children[node]
            if kids:
                k = list(kids)
                wsum[node] = wsum[k].sum()
                asum[node] = asum[k].sum()
                wrow[node] = wrow[k].sum(axis=0)
                urow[node] = urow[k].sum(axis=0)
            else:
                ids = self.members(node)
                wi = w[ids]
                wsum[node] = wi.sum()
                asum[node] = np.abs(wi).sum()
                wrow[node] = wi @ vals[ids]
                urow[node] = vals[ids].sum(axis=0)
        fallback = np.array([_cancels(a, b) for a, b in zip(wsum, asum)], dtype=bool)
        means = np.empty_like(wrow)
        ok = ~fallback
        means[ok] = wrow[ok] / wsum[ok, None]
        means[fallback] = urow[fallback] / count[fallback, None]
        return means, wsum, fallback

    def node(self, node_id: int) -> TreeNode:
        kids = self.children[node_id]
        return TreeNode(
            node_id=node_id,
            bounds=tuple(float(b) for b in self.bounds[node_id]),
            width=float(self.width[node_id]),
            children=tuple(kids),
            particle_ids=tuple(int(p) for p in self.members(node_id)) if not kids else (),
            centroid=(float(self.centroid[node_id, 0]), float(self.centroid[node_id, 1])),
            gamma_sum=float(self.gamma_sum[node_id]),
        )

    def to_json(self) -> dict:
        return {
            "leaf_capacity": self.leaf_capacity,
            "nodes": [
                {
                    "node_id": i,
                    "bounds": self.bounds[i].tolist(),
                    "centroid": self.centroid[i].tolist(),
                    "gamma_sum": float(self.gamma_sum[i]),
                    "children": list(self.children[i]),
                    "particle_ids": self.members(i).tolist() if self.is_leaf[i] else [],
                }
                for i in range(self.n_nodes)
            ],
        }


def build_tree(points: FloatArray, gamma: FloatArray, leaf_capacity: int = 1) -> QuadTree:
    return QuadTree(points, gamma, leaf_capacity)


def bh_prune_check(width: float, centroid: FloatArray, target: FloatArray, theta: float) -> bool:
    """True iff ``width / |centroid - target| <= theta``; never prunes at zero distance."""
    dist = float(np.hypot(centroid[0] - target[0], centroid[1] - target[1]))
    if dist == 0.0 or theta == 0.0:
        return False
    return width <= theta * dist


def neighbor_prune_check(
    source_bounds, target_leaf_bounds, target_leaf_width: float, p_c: float
) -> bool:
    """True iff the source cell does not overlap the inflated target-leaf neighborhood."""
    pad = p_c * target_leaf_width
    hxmin, hxmax = target_leaf_bounds[0] - pad, target_leaf_bounds[1] + pad
    hymin, hymax = target_leaf_bounds[2] - pad, target_leaf_bounds[3] + pad
    bxmin, bxmax, bymin, bymax = source_bounds
    overlap = hxmax > bxmin and hxmin < bxmax and hymax > bymin and hymin < bymax
    return not overlap


def collect_clusters(tree: QuadTree, target: int, criterion: Criterion) -> ClusterList:
    """Depth-first cluster search for particle ``target`` of ``tree``.

    Nodes that contain the target are never pruned; unpruned leaves contribute
    their particles (minus the target) as direct interactions.
    """
    tpt = tree.points[target]
    tleaf = tree.leaf_of[target]
    tbounds = tree.bounds[tleaf]
    twidth = float(tree.width[tleaf])
    trank = tree.rank[target]
    pruned: list[int] = []
    direct: list[int] = []
    stack = [0]
    while stack:
        node = stack.pop()
        if tree.start[node] <= trank < tree.end[node]:
            kids = tree.children[node]
            if kids:
                stack.extend(reversed(kids))
            else:
                direct.extend(int(p) for p in tree.members(node) if p != target)
            continue
        if isinstance(criterion, BarnesHut):
            prune = bh_prune_check(tree.width[node], tree.centroid[node], tpt, criterion.theta)
        else:
            prune = neighbor_prune_check(tree.bounds[node], tbounds, twidth, criterion.p_c)
        if prune:
            pruned.append(int(node))
        elif tree.is_leaf[node]:
            direct.extend(int(p) for p in tree.members(node))
        else:
            stack.extend(reversed(tree.children[node]))
    return ClusterList(pruned, direct)


def _expand_ranges(lo: np.ndarray, hi: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Concatenated ``arange(lo[k], hi[k])`` and the owning ``k`` of each entry."""
    lengths = hi - lo
    owner = np.repeat(np.arange(lo.size), lengths)
    if owner.size == 0:
        return owner, owner
    offsets = np.cumsum(lengths) - lengths
    return np.repeat(lo - offsets, lengths) + np.arange(owner.size), owner


def interaction_lists(tree: QuadTree, targets, criterion: Criterion):
    """Cluster and direct interaction pairs for many targets at once.

    Same accept/reject logic as :func:`collect_clusters`, advanced one tree
    level at a time for all targets together. Returns
    ``(cluster_t, cluster_node, direct_t, direct_p)`` where ``*_t`` index into
    ``targets``. Pairs are ordered by target slot, then by discovery.
    """
    targets = np.asarray(list(targets) if not isinstance(targets, np.ndarray) else targets, dtype=np.intp)
    nkids = np.array([len(k) for k in tree.children], dtype=np.intp)
    kid_ptr = np.concatenate([[0], np.cumsum(nkids)])
    kid_list = np.array([c for k in tree.children for c in k], dtype=np.intp)
    tpts = tree.points[targets]
    tleaf = tree.leaf_of[targets]
    trank = tree.rank[targets]

    slot = np.arange(targets.size)
    node = np.zeros(targets.size, dtype=np.intp)
    ct, cn, dt_, dp = [], [], [], []
    while slot.size:
        inside = (tree.start[node] <= trank[slot]) & (trank[slot] < tree.end[node])
        if isinstance(criterion, BarnesHut):
            d = np.hypot(tree.centroid[node, 0] - tpts[slot, 0], tree.centroid[node, 1] - tpts[slot, 1])
            prune = (d > 0.0) & (criterion.theta > 0.0) & (tree.width[node] <= criterion.theta * d)
        else:
            lb = tree.bounds[tleaf[slot]]
            pad = criterion.p_c * tree.width[tleaf[slot]]
            b = tree.bounds[node]
            overlap = (
                (lb[:, 1] + pad > b[:, 0]) & (lb[:, 0] - pad < b[:, 1])
                & (lb[:, 3] + pad > b[:, 2]) & (lb[:, 2] - pad < b[:, 3])
            )
            prune = ~overlap
        prune &= ~inside
        ct.append(slot[prune])
        cn.append(node[prune])
        leaf = tree.is_leaf[node] & ~prune
        if leaf.any():
            ls, ln = slot[leaf], node[leaf]
            pos, owner = _expand_ranges(tree.start[ln], tree.end[ln])
            pid = tree.perm[pos]
            keep = pid != targets[ls[owner]]
            dt_.append(ls[owner][keep])
            dp.append(pid[keep])
        go = ~prune & ~tree.is_leaf[node]
        gs, gn = slot[go], node[go]
        pos, owner = _expand_ranges(kid_ptr[gn], kid_ptr[gn + 1])
        slot, node = gs[owner], kid_list[pos]

    def flat(parts):
        return np.concatenate(parts).astype(np.intp) if parts else np.zeros(0, np.intp)

    ct, cn, dt_, dp = flat(ct), flat(cn), flat(dt_), flat(dp)
    oc = np.argsort(ct, kind="stable")
    od = np.argsort(dt_, kind="stable")
    return ct[oc], cn[oc], dt_[od], dp[od]


def _bh_sums(x: FloatArray, sys: ParticleSystem, criterion: Criterion, leaf_capacity: int, with_jacobian: bool):
    chi, psi = split(np.asarray(x, dtype=np.float64))
    n = sys.n
    tree = QuadTree(np.column_stack([chi, psi]), sys.circulation, leaf_capacity)
    ct, cn, dt_, dp = interaction_lists(tree, range(n), criterion)
    sx = np.concatenate([chi, tree.centroid[:, 0]])
    sy = np.concatenate([psi, tree.centroid[:, 1]])
    sg = np.concatenate([sys.circulation, tree.gamma_sum])
    pt = np.concatenate([dt_, ct])
    ps = np.concatenate([dp, cn + n])
    out = kernel_sums(chi, psi, sx, sy, sg, sys.offset, pt, ps, n, with_jacobian=with_jacobian)
    f = np.concatenate([out[0], out[1]])
    if sys.inflow is not None:
        f += sys.inflow
    if with_jacobian:
        return f, BlockDiagonalJacobian(*out[2]), pt.size
    return f, None, pt.size


def bh_velocity(x: FloatArray, sys: ParticleSystem, criterion: Criterion, leaf_capacity: int = 1) -> FloatArray:
    """Treecode velocity: monopole clusters plus exact near-field pairs (tree rebuilt here)."""
    return _bh_sums(x, sys, criterion, leaf_capacity, False)[0]


class BarnesHutEvaluator:
    """Velocity evaluator that rebuilds the tree at every call."""

    def __init__(self, sys: ParticleSystem, criterion: Criterion, leaf_capacity: int = 1):
        self.sys = sys
        self.criterion = criterion
        self.leaf_capacity = leaf_capacity
        self.calls = 0
        self.kernel_evals = 0

    def velocity(self, x: FloatArray) -> FloatArray:
        f, _, npairs = _bh_sums(x, self.sys, self.criterion, self.leaf_capacity, False)
        self.calls += 1
        self.kernel_evals += npairs
        return f

    def velocity_and_jacobian(self, x: FloatArray):
        f, jac, npairs = _bh_sums(x, self.sys, self.criterion, self.leaf_capacity, True)
        self.calls += 1
        self.kernel_evals += npairs
        return f, jac
