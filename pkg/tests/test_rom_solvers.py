import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ptrom.integrators import NewtonConfig, PairwiseEvaluator, TimeGrid, fom_simulate
from ptrom.kernel import ParticleSystem, kernel_pair, pairwise_velocity
from ptrom.quadtree import BarnesHut, Neighbor
from ptrom.reduction import PODBasis, build_pod, cluster_pod, gnat_operator
from ptrom.rom_solvers import (
    FullStateEvaluator,
    HyperPair,
    RomConfig,
    RomTrajectory,
    gnat_simulate,
    gnat_step,
    hyperpair,
    lspg_simulate,
    ptrom_simulate,
    reconstruct_output,
)


def random_case(seed, n=12):
    rng = np.random.default_rng(seed)
    x0 = rng.uniform(-1, 1, 2 * n)
    gamma = rng.uniform(0.5, 1.5, n)
    return rng, x0, ParticleSystem(gamma, 0.05)


def identity_basis(x0):
    return PODBasis(np.eye(x0.size), np.ones(x0.size), x0)


TIGHT = RomConfig(tol=1e-12)


class TestDegenerateLimits:
    """Each collapsed hierarchy level must reproduce the one above it."""

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_lspg_identity_basis_is_fom(self, seed):
        _, x0, sys = random_case(seed)
        grid = TimeGrid(0.01, 40)
        start = time.perf_counter()
        fom = fom_simulate(x0, grid, NewtonConfig(tol=1e-13), PairwiseEvaluator(sys))
        basis = identity_basis(x0)
        tr = lspg_simulate(basis, FullStateEvaluator(basis, sys), grid, TIGHT)
        assert np.abs(reconstruct_output(tr.x_hat_history, basis) - fom.snapshots.columns).max() <= 1e-8
        assert time.perf_counter() - start < 30

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_gnat_full_sampling_is_lspg(self, seed):
        rng, x0, sys = random_case(seed)
        grid = TimeGrid(0.01, 40)
        basis = identity_basis(x0)
        lspg = lspg_simulate(basis, FullStateEvaluator(basis, sys), grid, TIGHT)
        phi_r = np.linalg.qr(rng.normal(size=(x0.size, x0.size)))[0]
        op = gnat_operator(phi_r, range(sys.n))
        gnat = gnat_simulate(basis, HyperPair(basis, sys, range(sys.n)), op, grid, TIGHT)
        assert np.abs(gnat.x_hat_history - lspg.x_hat_history).max() <= 1e-8

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_ptrom_without_clusters_is_gnat(self, seed):
        rng, x0, sys = random_case(seed, n=16)
        grid = TimeGrid(0.01, 40)
        fom = fom_simulate(x0, grid, NewtonConfig(tol=1e-12), PairwiseEvaluator(sys))
        basis = build_pod(fom.snapshots.columns, 8, x0, subtract_reference=True)
        ids = [1, 4, 6, 9, 11, 14]
        phi_r = np.linalg.qr(rng.normal(size=(x0.size, 6)))[0]
        op = gnat_operator(phi_r, ids)
        gnat = gnat_simulate(basis, HyperPair(basis, sys, ids), op, grid, TIGHT)
        sur = cluster_pod(basis, sys.circulation, x0, ids, Neighbor(1e6))
        assert sur.n_clusters == 0
        ptrom, _ = ptrom_simulate(basis, op, sur, sys, grid, TIGHT)
        assert np.abs(ptrom.x_hat_history - gnat.x_hat_history).max() <= 1e-8


class TestHyperPair:
    def test_one_target_one_cluster(self):
        x0 = np.array([0.0, 2.0, 2.2, 0.0, 1.0, 1.3])
        # tree space rows: target at (1, 1), both sources near the origin
        phi = np.zeros((6, 2))
        phi[:3, 0] = [1.0, 0.01, 0.02]
        phi[3:, 1] = [1.0, 0.01, 0.0]
        basis = PODBasis(phi, np.ones(2), x0)
        sys = ParticleSystem(np.array([1.0, 0.7, 0.3]), 0.05)
        sur = cluster_pod(basis, sys.circulation, x0, [0], BarnesHut(10.0))
        assert sur.n_clusters == 1 and sur.per_target_direct == [[]]
        x_hat = np.array([0.1, -0.2])
        f = hyperpair(sur, basis, x_hat, sys, [0])
        target = x0[[0, 3]] + phi[[0, 3]] @ x_hat
        assert sur.gamma_tilde[0] == pytest.approx(1.0)
        cluster = sur.x0_tilde + sur.phi_tilde @ x_hat
        np.testing.assert_allclose(f, kernel_pair(target, cluster, sur.gamma_tilde[0], 0.05), rtol=1e-14)

    @given(st.integers(0, 2**31))
    def test_full_sampling_no_clusters_is_pairwise(self, seed):
        rng, x0, sys = random_case(seed, n=9)
        basis = build_pod(x0[:, None] + rng.normal(size=(18, 5)), 4, x0, subtract_reference=True)
        x_hat = rng.normal(size=4) * 0.1
        f = hyperpair(None, basis, x_hat, sys, range(9))
        np.testing.assert_allclose(f, pairwise_velocity(basis.expand(x_hat), sys), rtol=1e-12, atol=1e-13)

    def test_kernel_evals_counter(self):
        _, x0, sys = random_case(3, n=10)
        basis = identity_basis(x0)
        hp = HyperPair(basis, sys, [2, 5])
        assert hp.n_pairs == 2 * 9
        hp.evaluate(np.zeros(20))
        hp.evaluate(np.zeros(20), False)
        assert hp.kernel_evals == 2 * hp.n_pairs and hp.calls == 2

    def test_pair_count_independent_of_n(self):
        """With a fixed clustering width, per-target work is set by the cluster lists, not by N."""
        counts = []
        for n in (200, 800):
            rng = np.random.default_rng(0)
            x0 = rng.uniform(0, 1, 2 * n)
            sys = ParticleSystem(np.ones(n), 0.01)
            basis = build_pod(x0[:, None] + 1e-3 * rng.normal(size=(2 * n, 4)), 3, x0, subtract_reference=True)
            sur = cluster_pod(basis, sys.circulation, x0, [0, n // 2], BarnesHut(0.5))
            counts.append(HyperPair(basis, sys, sur.target_ids, sur).n_pairs)
        assert counts[1] < 2 * counts[0]

    def test_mismatched_surrogate(self):
        _, x0, sys = random_case(0)
        basis = identity_basis(x0)
        sur = cluster_pod(basis, sys.circulation, x0, [1], Neighbor(0.0))
        with pytest.raises(ValueError):
            HyperPair(basis, sys, [2], sur)


class TestSolverProperties:
    def test_zero_circulation_keeps_state(self):
        _, x0, _ = random_case(0)
        sys = ParticleSystem(np.zeros(12), 0.05)
        basis = identity_basis(x0)
        tr = lspg_simulate(basis, FullStateEvaluator(basis, sys), TimeGrid(0.1, 5), RomConfig())
        assert np.all(tr.x_hat_history == 0.0) and np.all(tr.iterations == 1)

    def test_gnat_zero_circulation_single_iteration(self):
        rng, x0, _ = random_case(0)
        sys = ParticleSystem(np.zeros(12), 0.05)
        basis = identity_basis(x0)
        op = gnat_operator(np.linalg.qr(rng.normal(size=(24, 24)))[0], range(12))
        hp = HyperPair(basis, sys, range(12))
        xs, f, _ = hp.evaluate(np.zeros(24), False)
        res = gnat_step(np.zeros(24), xs, f, hp, op, 0.1, RomConfig())
        assert res.iterations == 1 and res.converged and np.all(res.x_hat == 0.0)

    @settings(max_examples=10)
    @given(st.integers(0, 2**31), st.integers(1, 4))
    def test_iteration_cap_and_tolerance(self, seed, k_max):
        rng, x0, sys = random_case(seed, n=10)
        fom = fom_simulate(x0, TimeGrid(0.02, 20), NewtonConfig(), PairwiseEvaluator(sys))
        basis = build_pod(fom.snapshots.columns, 4, x0, subtract_reference=True)
        ids = [0, 3, 7]
        op = gnat_operator(np.linalg.qr(rng.normal(size=(20, 5)))[0], ids)
        cfg = RomConfig(tol=1e-6, max_iters=k_max)
        hp = HyperPair(basis, sys, ids)
        xs, f, _ = hp.evaluate(np.zeros(4), False)
        res = gnat_step(np.zeros(4), xs, f, hp, op, 0.02, cfg)
        assert res.iterations <= k_max
        if res.converged:
            assert res.epsilons[-1] <= cfg.tol
        tr = gnat_simulate(basis, hp, op, TimeGrid(0.02, 10), cfg)
        assert tr.iterations.max() <= k_max

    def test_reconstruct_sampled_bit_identical(self):
        rng, x0, sys = random_case(5)
        fom = fom_simulate(x0, TimeGrid(0.02, 15), NewtonConfig(), PairwiseEvaluator(sys))
        basis = build_pod(fom.snapshots.columns, 5, x0, subtract_reference=True)
        ids = [2, 5, 8, 10]
        op = gnat_operator(np.linalg.qr(rng.normal(size=(24, 6)))[0], ids)
        sur = cluster_pod(basis, sys.circulation, x0, ids, Neighbor(0.0))
        tr, ev = ptrom_simulate(basis, op, sur, sys, TimeGrid(0.02, 15), RomConfig())
        out = reconstruct_output(tr.x_hat_history, basis, ev.rows)
        assert np.array_equal(out, tr.sampled_state_history)

    def test_reconstruct_unit_bump(self):
        ref = np.arange(4.0)
        out = reconstruct_output(np.array([[1.0], [0.0], [0.0], [0.0]]), PODBasis(np.eye(4), np.ones(4), ref))
        np.testing.assert_array_equal(out[:, 0], ref + [1, 0, 0, 0])
        with pytest.raises(IndexError):
            reconstruct_output(np.zeros((4, 1)), PODBasis(np.eye(4), np.ones(4), ref), [4])

    def test_zero_steps(self):
        _, x0, sys = random_case(0)
        basis = identity_basis(x0)
        tr = lspg_simulate(basis, FullStateEvaluator(basis, sys), TimeGrid(0.1, 0), RomConfig())
        assert tr.x_hat_history.shape == (24, 0) and tr.n_steps == 0

    def test_residual_sink_collects_every_iterate(self):
        _, x0, sys = random_case(0)
        basis = identity_basis(x0)
        sink = []
        tr = lspg_simulate(basis, FullStateEvaluator(basis, sys), TimeGrid(0.01, 5), RomConfig(), sink)
        assert len(sink) == int(np.sum(tr.iterations + 1))

    def test_config_validation(self):
        for bad in ({"tol": 0}, {"max_iters": 0}, {"alpha": 1.5}, {"convergence": "x"}):
            with pytest.raises(ValueError):
                RomConfig(**bad)

    def test_trajectory_roundtrip(self, tmp_path):
        _, x0, sys = random_case(0)
        basis = identity_basis(x0)
        tr = lspg_simulate(basis, FullStateEvaluator(basis, sys), TimeGrid(0.01, 4), RomConfig())
        tr.save(tmp_path / "t")
        back = RomTrajectory.load(tmp_path / "t")
        np.testing.assert_array_equal(back.x_hat_history, tr.x_hat_history)
        np.testing.assert_array_equal(back.iterations, tr.iterations)
        assert back.dt == tr.dt
