import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptrom.kernel import ParticleSystem, pairwise_velocity
from ptrom.quadtree import (
    BarnesHut,
    BarnesHutEvaluator,
    Neighbor,
    QuadTree,
    bh_prune_check,
    bh_velocity,
    build_tree,
    collect_clusters,
    interaction_lists,
    neighbor_prune_check,
    parse_criterion,
)

criteria = st.one_of(
    st.floats(0.0, 3.0).map(BarnesHut),
    st.floats(0.0, 3.0).map(Neighbor),
)


@st.composite
def point_sets(draw, max_n=60):
    n = draw(st.integers(1, max_n))
    seed = draw(st.integers(0, 2**32 - 1))
    cap = draw(st.integers(1, 4))
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-1, 1, (n, 2))
    if draw(st.booleans()) and n > 3:
        pts[1] = pts[0]  # duplicate point
        pts[2, 0] = 0.0  # a point on a split line
    return pts, rng.uniform(0.1, 1.0, n), cap


class TestBuild:
    def test_single_point(self):
        t = build_tree(np.array([[0.3, 0.4]]), [1.0])
        assert t.n_nodes == 1 and t.is_leaf[0]

    def test_capacity_respected(self, rng):
        pts = rng.uniform(size=(200, 2))
        t = QuadTree(pts, np.ones(200), leaf_capacity=5)
        sizes = (t.end - t.start)[t.is_leaf]
        assert sizes.max() <= 5 and sizes.sum() == 200

    def test_square_root_cell(self, rng):
        pts = rng.uniform(size=(50, 2)) * [10.0, 1.0]
        t = build_tree(pts, np.ones(50))
        xmin, xmax, ymin, ymax = t.bounds[0]
        assert xmax - xmin == pytest.approx(ymax - ymin)

    def test_coincident_points_terminate(self):
        pts = np.zeros((5, 2))
        t = build_tree(pts, np.ones(5))
        assert sorted(t.members(0).tolist()) == list(range(5))

    @pytest.mark.parametrize("bad", [np.zeros((3, 3)), np.array([[np.nan, 0.0]])])
    def test_invalid_points(self, bad):
        with pytest.raises(ValueError):
            build_tree(bad, np.ones(len(bad)))

    def test_gamma_length_checked(self):
        with pytest.raises(ValueError):
            build_tree(np.zeros((2, 2)), [1.0])

    @given(point_sets())
    def test_leaves_partition_points(self, case):
        pts, g, cap = case
        t = QuadTree(pts, g, cap)
        leaves = np.flatnonzero(t.is_leaf)
        ids = np.concatenate([t.members(k) for k in leaves])
        assert sorted(ids.tolist()) == list(range(len(pts)))
        for p in range(len(pts)):
            assert t.contains(t.leaf_of[p], p)
            xmin, xmax, ymin, ymax = t.bounds[t.leaf_of[p]]
            assert xmin <= pts[p, 0] <= xmax and ymin <= pts[p, 1] <= ymax

    @given(point_sets())
    def test_gamma_sums_and_centroids(self, case):
        pts, g, cap = case
        t = QuadTree(pts, g, cap)
        for k in range(t.n_nodes):
            ids = t.members(k)
            assert t.gamma_sum[k] == pytest.approx(g[ids].sum())
            np.testing.assert_allclose(t.centroid[k], g[ids] @ pts[ids] / g[ids].sum(), atol=1e-12)

    def test_to_json(self, rng):
        t = build_tree(rng.uniform(size=(6, 2)), np.ones(6))
        js = t.to_json()
        assert len(js["nodes"]) == t.n_nodes and js["leaf_capacity"] == 1
        assert t.node(0).children == tuple(t.children[0])


class TestAggregate:
    def test_equal_weights_give_arithmetic_mean(self):
        t = build_tree(np.array([[0.0, 0.0], [1.0, 1.0]]), [2.0, 2.0])
        rows = np.array([[1.0, 3.0], [5.0, 7.0]])
        means, sums, fb = t.aggregate(rows, np.array([2.0, 2.0]))
        np.testing.assert_allclose(means[0], [3.0, 5.0])
        assert sums[0] == 4.0 and not fb[0]

    def test_cancelling_weights_fall_back(self):
        t = build_tree(np.array([[0.0, 0.0], [1.0, 1.0]]), [1.0, -1.0])
        means, sums, fb = t.aggregate(np.array([[0.0], [4.0]]), np.array([1.0, -1.0]))
        assert fb[0] and means[0, 0] == 2.0

    @given(point_sets(), st.floats(-5, 5))
    def test_linearity(self, case, a):
        pts, g, cap = case
        t = QuadTree(pts, g, cap)
        vals = np.random.default_rng(0).normal(size=(len(pts), 3))
        m1, _, _ = t.aggregate(vals, g)
        m2, _, _ = t.aggregate(a * vals, g)
        np.testing.assert_allclose(m2, a * m1, atol=1e-12)


class TestPruneChecks:
    def test_bh(self):
        assert bh_prune_check(1.0, (3.0, 0.0), (0.0, 0.0), 0.5)
        assert not bh_prune_check(2.0, (3.0, 0.0), (0.0, 0.0), 0.5)
        assert not bh_prune_check(1.0, (0.0, 0.0), (0.0, 0.0), 10.0)
        assert not bh_prune_check(1e-9, (9.0, 0.0), (0.0, 0.0), 0.0)

    def test_neighbor_disjoint(self):
        assert neighbor_prune_check((3, 4, 0, 1), (0, 1, 0, 1), 1.0, 1.0)

    def test_neighbor_overlap(self):
        assert not neighbor_prune_check((1.5, 2.5, 0, 1), (0, 1, 0, 1), 1.0, 1.0)

    def test_neighbor_shared_edge_pruned(self):
        assert neighbor_prune_check((1, 2, 0, 1), (0, 1, 0, 1), 1.0, 0.0)

    def test_parse(self):
        assert parse_criterion("bh:0.5") == BarnesHut(0.5)
        assert parse_criterion("nn:1") == Neighbor(1.0)
        with pytest.raises(ValueError):
            parse_criterion("fmm:2")
        with pytest.raises(ValueError):
            BarnesHut(-1.0)


class TestClusters:
    @given(point_sets(), criteria)
    def test_partition_property(self, case, crit):
        pts, g, cap = case
        t = QuadTree(pts, g, cap)
        for target in range(len(pts)):
            cl = collect_clusters(t, target, crit)
            covered = [int(p) for k in cl.pruned_node_ids for p in t.members(k)] + list(cl.direct_ids)
            assert sorted(covered) == [p for p in range(len(pts)) if p != target]
            assert all(not t.contains(k, target) for k in cl.pruned_node_ids)

    @given(point_sets(), criteria)
    def test_vectorized_lists_match_traversal(self, case, crit):
        pts, g, cap = case
        t = QuadTree(pts, g, cap)
        ct, cn, dt, dp = interaction_lists(t, np.arange(len(pts)), crit)
        assert np.all(np.diff(ct) >= 0) and np.all(np.diff(dt) >= 0)
        for target in range(len(pts)):
            cl = collect_clusters(t, target, crit)
            assert sorted(cn[ct == target].tolist()) == sorted(cl.pruned_node_ids)
            assert sorted(dp[dt == target].tolist()) == sorted(cl.direct_ids)

    @given(point_sets(), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
    def test_monotone_in_theta_and_width(self, case, a, b):
        pts, g, cap = case
        t = QuadTree(pts, g, cap)
        lo, hi = sorted((a, b))
        n_direct = lambda crit: interaction_lists(t, np.arange(len(pts)), crit)[2].size
        assert n_direct(BarnesHut(hi)) <= n_direct(BarnesHut(lo))
        assert n_direct(Neighbor(lo)) <= n_direct(Neighbor(hi))

    def test_wide_neighborhood_has_no_clusters(self, rng):
        t = build_tree(rng.uniform(size=(4, 2)), np.ones(4))
        ct, cn, dt, dp = interaction_lists(t, np.arange(4), Neighbor(1e6))
        assert cn.size == 0 and dp.size == 12


class TestBarnesHutVelocity:
    def test_exact_limits(self, rng):
        n = 300
        x = rng.normal(size=2 * n)
        sys = ParticleSystem(rng.normal(size=n), 0.0)
        ref = pairwise_velocity(x, sys)
        np.testing.assert_allclose(bh_velocity(x, sys, BarnesHut(0.0)), ref, rtol=0, atol=1e-12)
        np.testing.assert_allclose(bh_velocity(x, sys, Neighbor(1e9)), ref, rtol=0, atol=1e-12)

    def test_approximation_improves_with_theta(self, rng):
        n = 400
        x = rng.normal(size=2 * n)
        sys = ParticleSystem(rng.uniform(0.5, 1.0, n), 0.01)
        ref = pairwise_velocity(x, sys)
        errs = [np.linalg.norm(bh_velocity(x, sys, BarnesHut(th)) - ref) for th in (1.0, 0.5, 0.25)]
        assert errs[0] > errs[1] > errs[2]
        assert errs[2] < 1e-2 * np.linalg.norm(ref)

    def test_leaf_capacity_does_not_break_exact_limit(self, rng):
        x = rng.normal(size=200)
        sys = ParticleSystem(rng.normal(size=100), 0.0, inflow=rng.normal(size=200))
        np.testing.assert_allclose(
            bh_velocity(x, sys, BarnesHut(0.0), leaf_capacity=7), pairwise_velocity(x, sys), atol=1e-12
        )

    def test_evaluator_counts(self, rng):
        x = rng.normal(size=40)
        ev = BarnesHutEvaluator(ParticleSystem(np.ones(20), 0.1), BarnesHut(0.5))
        ev.velocity(x)
        f, jac = ev.velocity_and_jacobian(x)
        assert ev.calls == 2 and ev.kernel_evals > 0 and jac.n == 20
