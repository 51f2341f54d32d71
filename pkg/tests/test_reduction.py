import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ptrom.quadtree import Neighbor, BarnesHut
from ptrom.reduction import (
    GnatOperator,
    PODBasis,
    RankDeficiencyError,
    ReductionError,
    ResidualBasis,
    SurrogateSourceBasis,
    build_pod,
    cluster_pod,
    gnat_operator,
    greedy_sample,
    reassign_cluster_circulation,
    weighted_pod_space,
)


def straight_line_greedy(phi, n_target):
    """Plain re-statement of the greedy sample-particle loop, one particle at a time."""
    n = phi.shape[0] // 2
    m_r = phi.shape[1]
    n_c = min(m_r, 2 * n_target)
    n_a = n_target
    n_it = min(n_c, n_a)
    n_rhs = math.ceil(n_c / n_a)
    chosen = []
    used_cols = 0
    residual = None
    for it in range(1, n_it + 1):
        n_ci = n_c // n_it + (1 if it <= n_c % n_it else 0)
        n_ai = (n_a * n_rhs) // n_c + (1 if n_rhs == 1 and it <= n_a % n_c else 0)
        block = phi[:, used_cols:used_cols + n_ci]
        if used_cols == 0:
            residual = block.copy()
        else:
            rows = [i for i in chosen] + [i + n for i in chosen]
            coef, *_ = np.linalg.lstsq(phi[rows, :used_cols], block[rows], rcond=None)
            residual = block - phi[:, :used_cols] @ coef
        for _ in range(n_ai):
            if len(chosen) == n_target:
                break
            best, best_score = None, -1.0
            for p in range(n):
                if p in chosen:
                    continue
                score = sum(residual[p, q] ** 2 + residual[p + n, q] ** 2 for q in range(residual.shape[1]))
                if score > best_score:
                    best, best_score = p, score
            chosen.append(best)
        used_cols += n_ci
    while len(chosen) < n_target:
        scores = [(-1.0 if p in chosen else float(np.sum(residual[p] ** 2 + residual[p + n] ** 2))) for p in range(n)]
        chosen.append(int(np.argmax(scores)))
    return sorted(chosen)


def orthonormal(rng, rows, cols):
    return np.linalg.qr(rng.normal(size=(rows, cols)))[0]


class TestBuildPod:
    def test_identical_columns(self):
        c = np.array([3.0, -4.0, 0.0, 1.0])
        b = build_pod(np.column_stack([c, c]), 1)
        np.testing.assert_allclose(b.phi[:, 0], -c / np.linalg.norm(c))  # largest entry made positive
        assert b.phi[np.argmax(np.abs(b.phi[:, 0])), 0] > 0

    def test_orthogonal_columns(self):
        S = np.zeros((4, 2))
        S[0, 0], S[2, 1] = 3.0, 2.0
        b = build_pod(S, 2)
        np.testing.assert_allclose(b.singular_values, [3.0, 2.0])
        np.testing.assert_allclose(np.abs(b.phi), np.abs(S / [3.0, 2.0]), atol=1e-15)

    def test_rank_error_lists_rank(self):
        c = np.ones(5)
        with pytest.raises(RankDeficiencyError, match="rank 1"):
            build_pod(np.column_stack([c, 2 * c, 3 * c]), 2)

    def test_invalid_m(self, rng):
        with pytest.raises(ReductionError):
            build_pod(rng.normal(size=(5, 3)), 4)

    def test_reference_subtraction(self, rng):
        ref = rng.normal(size=6)
        S = ref[:, None] + rng.normal(size=(6, 1)) @ rng.normal(size=(1, 4))
        b = build_pod(S, 1, ref, subtract_reference=True)
        for col in S.T:
            np.testing.assert_allclose(b.expand(b.phi.T @ (col - ref)), col, atol=1e-12)

    def test_energy_matches_gram_eigenvalues(self, rng):
        S = rng.normal(size=(20, 10))
        b = build_pod(S, 6)
        eig = np.sort(np.linalg.eigvalsh(S.T @ S))[::-1]
        np.testing.assert_allclose(b.singular_values**2, eig[:6], rtol=1e-10)
        captured = np.linalg.norm(b.phi.T @ S) ** 2 / np.linalg.norm(S) ** 2
        assert captured == pytest.approx(eig[:6].sum() / eig.sum(), rel=1e-10)

    @given(st.integers(0, 2**31), st.integers(2, 8), st.integers(1, 8))
    def test_orthonormal_and_tail_energy(self, seed, cols, m):
        rng = np.random.default_rng(seed)
        S = rng.normal(size=(12, cols))
        m = min(m, cols)
        b = build_pod(S, m)
        assert np.abs(b.phi.T @ b.phi - np.eye(m)).max() <= 1e-10
        assert np.all(np.diff(b.singular_values) <= 0) and np.all(b.singular_values >= 0)
        full = np.linalg.svd(S, compute_uv=False)
        err = np.linalg.norm(S - b.phi @ (b.phi.T @ S)) ** 2
        assert err == pytest.approx(np.sum(full[m:] ** 2), rel=1e-8, abs=1e-10)

    def test_save_load(self, tmp_path, rng):
        b = build_pod(rng.normal(size=(6, 4)), 3, rng.normal(size=6))
        b.save(tmp_path / "pod")
        c = PODBasis.load(tmp_path / "pod")
        np.testing.assert_array_equal(c.phi, b.phi)
        np.testing.assert_array_equal(c.x_ref, b.x_ref)
        np.testing.assert_array_equal(c.singular_values, b.singular_values)


class TestWeightedSpace:
    def test_single_mode(self, rng):
        phi = orthonormal(rng, 6, 1)
        np.testing.assert_allclose(weighted_pod_space(PODBasis(phi, np.array([2.0]), np.zeros(6))), 2 * phi[:, 0])

    def test_identity_columns(self):
        phi = np.eye(4)[:, :2]
        np.testing.assert_allclose(weighted_pod_space(PODBasis(phi, np.array([5.0, 7.0]), np.zeros(4))), [5, 7, 0, 0])


class TestGreedy:
    def test_first_pick_follows_mass(self):
        phi = np.zeros((12, 1))
        phi[3], phi[9] = 0.6, 0.8
        assert greedy_sample(phi, 1) == [3]

    def test_preseed_untouched(self, rng):
        assert greedy_sample(orthonormal(rng, 10, 2), 1, preseed=[1]) == [1]

    def test_preseed_kept(self, rng):
        ids = greedy_sample(orthonormal(rng, 20, 4), 5, preseed=[7])
        assert 7 in ids and len(ids) == 5

    def test_too_many(self, rng):
        with pytest.raises(ReductionError):
            greedy_sample(orthonormal(rng, 10, 2), 6)

    @pytest.mark.parametrize("m_r,n_target", [(3, 4), (8, 4), (5, 5), (12, 3)])
    def test_matches_straight_line_oracle(self, rng, m_r, n_target):
        phi = orthonormal(rng, 30, m_r)
        assert greedy_sample(phi, n_target) == straight_line_greedy(phi, n_target)

    @given(st.integers(0, 2**31), st.integers(1, 10), st.integers(1, 8))
    def test_size_and_uniqueness(self, seed, m_r, n_target):
        phi = orthonormal(np.random.default_rng(seed), 24, m_r)
        ids = greedy_sample(phi, n_target)
        assert len(ids) == len(set(ids)) == n_target and ids == sorted(ids)


class TestGnatOperator:
    def test_full_sampling_gives_transpose(self, rng):
        phi = orthonormal(rng, 10, 4)
        op = gnat_operator(phi, range(5))
        np.testing.assert_allclose(op.A, phi.T, atol=1e-12)

    def test_unit_norm_rows(self):
        phi = np.zeros((4, 1))
        phi[0], phi[2] = 0.6, 0.8
        np.testing.assert_allclose(gnat_operator(phi, [0]).A, [[0.6, 0.8]], atol=1e-15)

    def test_sampled_dofs_layout(self, rng):
        op = gnat_operator(orthonormal(rng, 20, 3), [7, 2])
        assert op.sample_ids.tolist() == [2, 7] and op.sampled_dofs.tolist() == [2, 7, 12, 17]

    def test_underdetermined(self, rng):
        with pytest.raises(RankDeficiencyError):
            gnat_operator(orthonormal(rng, 20, 5), [1, 2])

    def test_rank_deficient_names_columns(self):
        phi = np.zeros((8, 2))
        phi[0, 0], phi[1, 1] = 1.0, 1.0
        with pytest.raises(RankDeficiencyError, match="dependent columns"):
            gnat_operator(phi, [0, 2])

    @given(st.integers(0, 2**31), st.integers(1, 6))
    def test_gappy_identity(self, seed, m_r):
        rng = np.random.default_rng(seed)
        phi = orthonormal(rng, 40, m_r)
        ids = greedy_sample(phi, max(m_r, 3))
        op = gnat_operator(phi, ids)
        np.testing.assert_allclose(op.A @ phi[op.sampled_dofs], np.eye(m_r), atol=1e-10)
        r = phi @ rng.normal(size=m_r)
        np.testing.assert_allclose(phi @ (op.A @ r[op.sampled_dofs]), r, atol=1e-9)

    def test_save_load(self, tmp_path, rng):
        op = gnat_operator(orthonormal(rng, 20, 3), [1, 4, 8])
        op.save(tmp_path / "g")
        back = GnatOperator.load(tmp_path / "g", 10)
        np.testing.assert_array_equal(back.A, op.A)
        np.testing.assert_array_equal(back.sampled_dofs, op.sampled_dofs)


def small_basis(rng, n=12, m=3):
    x0 = rng.uniform(-1, 1, 2 * n)
    S = x0[:, None] + 0.1 * rng.normal(size=(2 * n, 8))
    return build_pod(S, m, x0), rng.uniform(0.5, 1.5, n)


class TestSurrogate:
    def test_huge_width_has_no_clusters(self, rng):
        basis, g = small_basis(rng, n=4)
        s = cluster_pod(basis, g, None, range(4), Neighbor(1e6))
        assert s.n_clusters == 0 and all(len(c) == 0 for c in s.per_target_clusters)
        assert all(len(d) == 3 for d in s.per_target_direct)

    def test_equal_weights_average_rows(self):
        phi = np.zeros((6, 1))
        phi[:3, 0] = [0.0, 10.0, 10.0 + 1e-9]
        phi[3:, 0] = [0.0, 10.0, 10.0]
        phi /= np.linalg.norm(phi)
        basis = PODBasis(phi, np.array([1.0]), np.zeros(6))
        s = cluster_pod(basis, np.ones(3), None, [0], BarnesHut(10.0))
        assert s.n_clusters == 1
        np.testing.assert_allclose(s.phi_tilde[:, 0], [phi[1:3, 0].mean(), phi[4:6, 0].mean()])
        assert s.gamma_tilde[0] == 2.0

    def test_empty_targets(self, rng):
        basis, g = small_basis(rng)
        with pytest.raises(ReductionError):
            cluster_pod(basis, g, None, [], Neighbor(0.0))

    @given(st.integers(0, 2**31), st.floats(0.0, 2.0), st.booleans())
    def test_partition_and_weighted_means(self, seed, width, use_bh):
        rng = np.random.default_rng(seed)
        basis, g = small_basis(rng)
        crit = BarnesHut(width) if use_bh else Neighbor(width)
        targets = sorted(rng.choice(12, size=4, replace=False).tolist())
        s = cluster_pod(basis, g, None, targets, crit)
        n = 12
        for slot, t in enumerate(targets):
            covered = [p for k in s.per_target_clusters[slot] for p in s.cluster_membership[k]]
            covered += s.per_target_direct[slot]
            assert sorted(covered) == [p for p in range(n) if p != t]
        for k, members in enumerate(s.cluster_membership):
            w = g[members]
            expect = w @ basis.phi[members] / w.sum()
            np.testing.assert_allclose(s.phi_tilde[k], expect, atol=1e-12)
            np.testing.assert_allclose(s.phi_tilde[s.n_clusters + k], w @ basis.phi[np.add(members, n)] / w.sum(), atol=1e-12)
            assert s.gamma_tilde[k] == pytest.approx(w.sum())

    def test_deterministic(self, rng):
        basis, g = small_basis(rng)
        a = cluster_pod(basis, g, None, [0, 5, 9], Neighbor(0.5))
        b = cluster_pod(basis, g, None, [9, 0, 5], Neighbor(0.5))
        for name in ("node_ids", "member_ids", "cluster_t", "cluster_k", "direct_p"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        np.testing.assert_array_equal(a.phi_tilde, b.phi_tilde)

    def test_reassign_idempotent_and_scale_invariant(self, rng):
        basis, g = small_basis(rng)
        s = cluster_pod(basis, g, None, [2, 7], BarnesHut(1.0))
        same = reassign_cluster_circulation(s, g)
        np.testing.assert_array_equal(same.gamma_tilde, s.gamma_tilde)
        double = reassign_cluster_circulation(s, 2 * g)
        np.testing.assert_allclose(double.gamma_tilde, 2 * s.gamma_tilde)
        np.testing.assert_allclose(double.phi_tilde, s.phi_tilde, atol=1e-14)

    def test_reassign_uses_member_sums(self, rng):
        basis, g = small_basis(rng)
        s = cluster_pod(basis, g, None, [2, 7], BarnesHut(1.5))
        g2 = rng.uniform(0.1, 3.0, 12)
        r = s.reassign_circulation(g2)
        np.testing.assert_allclose(r.gamma_tilde, [g2[m].sum() for m in s.cluster_membership])
        with pytest.raises(ReductionError):
            s.reassign_circulation(np.ones(5))

    def test_cancelling_cluster_flagged(self, rng):
        basis, g = small_basis(rng)
        s = cluster_pod(basis, g, None, [0], BarnesHut(100.0))
        k = max(range(s.n_clusters), key=lambda i: len(s.cluster_membership[i]))
        members = s.cluster_membership[k]
        g2 = np.ones(12)
        g2[members] = 0.0
        r = s.reassign_circulation(g2)
        assert r.fallback[k]
        np.testing.assert_allclose(r.phi_tilde[k], basis.phi[members].mean(axis=0), atol=1e-14)

    def test_save_load(self, tmp_path, rng):
        basis, g = small_basis(rng)
        s = cluster_pod(basis, g, None, [1, 3], Neighbor(0.0))
        s.save(tmp_path / "s")
        back = SurrogateSourceBasis.load(tmp_path / "s")
        np.testing.assert_array_equal(back.phi_tilde, s.phi_tilde)
        assert back.per_target_clusters == s.per_target_clusters


class TestResidualBasis:
    def test_from_snapshots(self, rng):
        R = rng.normal(size=(10, 6))
        rb = ResidualBasis.from_snapshots(R, 4)
        assert rb.rank == 4 and np.abs(rb.phi_r.T @ rb.phi_r - np.eye(4)).max() < 1e-12
