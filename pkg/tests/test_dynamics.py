import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ntkadv.attacks import AttackConfig
from ntkadv.datasets import generate_gaussian_blobs
from ntkadv.dynamics import (
    TrajectorySnapshot,
    concentration,
    descending_spectrum,
    kernel_distance,
    pairwise_distance_matrix,
    polar_coordinates,
    record_dynamics,
    save_distance_matrix,
    save_trajectory,
    snapshots_from_kernels,
    top_subspace_polar,
)
from ntkadv.errors import NumericalError, ParameterError
from ntkadv.nets import MLPNet, TrainConfig, TrainMode


def random_psd(n, seed):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((n, n + 2))
    return a @ a.T


class TestKernelDistance:
    def test_identity(self):
        a = random_psd(5, 0)
        assert kernel_distance(a, a) == pytest.approx(0.0, abs=1e-14)

    def test_scale_invariance(self):
        a = random_psd(5, 1)
        assert abs(kernel_distance(a, 3.0 * a)) <= 1e-12
        b = random_psd(5, 2)
        assert abs(kernel_distance(2.5 * a, 0.3 * b)
                   - kernel_distance(a, b)) <= 1e-12

    def test_orthogonal_kernels(self):
        assert kernel_distance(np.diag([1.0, 0.0]),
                               np.diag([0.0, 1.0])) == 1.0

    def test_symmetry_exact(self):
        a, b = random_psd(6, 3), random_psd(6, 4)
        assert kernel_distance(a, b) == kernel_distance(b, a)

    @given(st.integers(0, 10_000))
    @settings(max_examples=100, deadline=None)
    def test_range_on_psd_pairs(self, seed):
        a, b = random_psd(4, seed), random_psd(4, seed + 77)
        d = kernel_distance(a, b)
        assert -1e-12 <= d <= 1.0 + 1e-12

    def test_zero_matrix_rejected(self):
        with pytest.raises(NumericalError):
            kernel_distance(np.zeros((3, 3)), np.eye(3))


class TestPolar:
    def test_final_kernel_has_unit_radius(self):
        k0, kf = random_psd(5, 5), random_psd(5, 6)
        r, _ = polar_coordinates(kf, k0, kf)
        assert r == 1.0

    def test_initial_kernel_at_origin(self):
        k0, kf = random_psd(5, 7), random_psd(5, 8)
        r, theta = polar_coordinates(k0, k0, kf)
        assert r == 0.0
        assert theta == pytest.approx(0.0, abs=1e-7)

    def test_pure_radial_motion(self):
        k0, kf = random_psd(5, 9), random_psd(5, 10)
        r, theta = polar_coordinates(2.0 * k0, k0, kf)
        assert theta == pytest.approx(0.0, abs=1e-7)
        assert r == pytest.approx(np.linalg.norm(k0)
                                  / np.linalg.norm(kf - k0))

    def test_degenerate_denominator(self):
        k0 = random_psd(4, 11)
        with pytest.raises(NumericalError, match="final kernel"):
            polar_coordinates(k0, k0, k0)

    def test_theta_two_code_paths(self):
        for seed in range(5):
            a, b = random_psd(6, seed), random_psd(6, seed + 50)
            _, theta = polar_coordinates(b, a, 2 * b)
            direct = np.arccos(np.sum(a * b)
                               / (np.linalg.norm(a) * np.linalg.norm(b)))
            assert abs(theta - direct) <= 1e-10


class TestConcentration:
    def test_full_cutoff_is_one(self):
        eigs = descending_spectrum(random_psd(6, 12))
        assert concentration(eigs, 6) == pytest.approx(1.0)

    def test_flat_spectrum(self):
        assert concentration(np.array([1.0, 1.0, 1.0, 1.0]), 2) == 0.5

    def test_rank_one(self):
        assert concentration(np.array([3.0, 0.0, 0.0]), 1) == 1.0

    def test_monotone_in_cutoff(self):
        eigs = descending_spectrum(random_psd(8, 13))
        vals = [concentration(eigs, p) for p in range(1, 9)]
        assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))

    def test_all_zero_rejected(self):
        with pytest.raises(NumericalError):
            concentration(np.zeros(3), 1)

    def test_requires_descending(self):
        with pytest.raises(ParameterError):
            concentration(np.array([1.0, 2.0]), 1)


class TestTopSubspace:
    def test_full_cutoff_matches_plain_polar(self):
        kernels = [random_psd(5, s) for s in (20, 21, 22)]
        top = top_subspace_polar(kernels, 5)
        plain = [polar_coordinates(k, kernels[0], kernels[-1])
                 for k in kernels]
        for (r1, t1), (r2, t2) in zip(top, plain):
            assert r1 == pytest.approx(r2, rel=1e-10)
            # arccos near 1 turns 1e-16 reconstruction noise into ~1e-8 angle
            assert t1 == pytest.approx(t2, abs=1e-6)

    def test_planted_rotation_increases_angle(self):
        # Rank-2 kernel rotating out of its initial plane: angle grows with t.
        n = 6
        D = np.zeros((n, n))
        D[0, 0], D[1, 1] = 3.0, 1.0
        kernels = []
        for phi in np.linspace(0.0, np.pi / 2, 7):
            R = np.eye(n)
            R[0, 0] = R[2, 2] = np.cos(phi)
            R[0, 2], R[2, 0] = -np.sin(phi), np.sin(phi)
            kernels.append(R @ D @ R.T)
        angles = [t for _, t in top_subspace_polar(kernels, 2)]
        assert all(b > a - 1e-12 for a, b in zip(angles, angles[1:]))
        assert angles[-1] > angles[0]

    def test_constant_sequence_flagged(self):
        k = random_psd(4, 23)
        snaps = snapshots_from_kernels([0, 1], [k, k.copy()])
        assert all("degenerate_radius" in s.flags for s in snaps)
        assert all(np.isnan(s.r) for s in snaps)
        assert snaps[0].theta == pytest.approx(0.0, abs=1e-7)


class TestSnapshots:
    def test_single_checkpoint(self):
        k = random_psd(4, 24)
        (snap,) = snapshots_from_kernels([0], [k])
        assert snap.epoch == 0
        assert np.isnan(snap.r)
        assert "degenerate_radius" in snap.flags
        assert snap.theta == pytest.approx(0.0, abs=1e-7)
        assert snap.distance_to_init == pytest.approx(0.0, abs=1e-14)

    def test_record_dynamics_on_small_mlp(self):
        ds = generate_gaussian_blobs(40, 6, 2, 3.0, seed=0)
        net = MLPNet.create(6, (16,), 1, seed=1)
        cfg = TrainConfig(learning_rate=5e-2, epochs=30, batch_size=10,
                          mode=TrainMode.ADV_FGSM,
                          attack=AttackConfig(epsilon=0.3), seed=2)
        snaps, kernels, trace = record_dynamics(
            net, ds, cfg, np.arange(10), [0, 10, 30], cutoffs=(2, 5))
        assert [s.epoch for s in snaps] == [0, 10, 30]
        assert snaps[-1].r == pytest.approx(1.0)
        assert len(trace.records) == 30
        assert all(set(s.concentration) == {2, 5} for s in snaps)
        assert kernels[0].shape == (10, 10)

    def test_tracked_attacked_needs_attack(self):
        ds = generate_gaussian_blobs(20, 4, 2, 3.0, seed=3)
        net = MLPNet.create(4, (8,), 1, seed=4)
        with pytest.raises(ParameterError, match="attack"):
            record_dynamics(net, ds, TrainConfig(epochs=5), np.arange(5),
                            [0, 5], track_attacked=True)

    def test_attacked_batch_differs_from_clean(self):
        ds = generate_gaussian_blobs(30, 5, 2, 3.0, seed=5)
        cfg = TrainConfig(learning_rate=5e-2, epochs=10,
                          mode=TrainMode.ADV_FGSM,
                          attack=AttackConfig(epsilon=0.5), seed=6)
        clean = record_dynamics(MLPNet.create(5, (12,), 1, seed=7), ds, cfg,
                                np.arange(8), [0, 10])[1]
        attacked = record_dynamics(MLPNet.create(5, (12,), 1, seed=7), ds, cfg,
                                   np.arange(8), [0, 10],
                                   track_attacked=True)[1]
        assert not np.allclose(clean[-1], attacked[-1])


class TestExports:
    def test_trajectory_csv(self, tmp_path):
        kernels = [random_psd(25, s) for s in (30, 31, 32)]
        snaps = snapshots_from_kernels([0, 5, 10], kernels, cutoffs=(10, 20))
        path = tmp_path / "traj.csv"
        save_trajectory(snaps, path)
        lines = path.read_text().strip().split("\n")
        assert lines[0] == "epoch,frob_norm,dist_to_init,r,theta,conc_p10,conc_p20"
        assert len(lines) == 4
        assert float(lines[3].split(",")[3]) == 1.0  # final radius

    def test_distance_matrix_csv(self, tmp_path):
        kernels = [random_psd(6, s) for s in (33, 34, 35, 36)]
        mat = pairwise_distance_matrix(kernels)
        np.testing.assert_array_equal(mat, mat.T)
        assert np.all(np.diag(mat) == 0.0)
        path = tmp_path / "dist.csv"
        save_distance_matrix(mat, path)
        rows = path.read_text().strip().split("\n")
        assert len(rows) == 4
        assert len(rows[0].split(",")) == 4
