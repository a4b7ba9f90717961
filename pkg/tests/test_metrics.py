"""Image quality metrics and gauge-aligned trajectory error.

The structural-similarity oracle below is an independent, loop-based
reimplementation (explicit window sums); the alignment oracles are
hand-constructed poses whose aligned errors are known in closed form."""

import numpy as np
import pytest

from evdeblur.lie import RigidTransform, Twist, se3_exp
from evdeblur.measurement import BT601
from evdeblur.metrics import (
    SSIM_K1,
    SSIM_K2,
    SSIM_SIGMA,
    SSIM_WINDOW,
    ImageTooSmall,
    MetricReport,
    align_trajectories,
    psnr,
    ssim,
    trajectory_errors,
    write_metrics_csv,
)
from evdeblur.optim import ShapeMismatch


def rot_z(phi):
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


class TestPsnr:
    def test_hand_values(self):
        a = np.zeros((4, 4, 3))
        assert psnr(a, a + 0.5) == pytest.approx(-10 * np.log10(0.25), abs=1e-12)
        assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-10)
        assert psnr(a + 0.3, a + 0.3) == float("inf")

    def test_symmetric(self):
        rng = np.random.default_rng(0)
        a, b = rng.uniform(0, 1, (2, 6, 6, 3))
        assert psnr(a, b) == psnr(b, a)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            psnr(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_more_noise_is_lower(self):
        rng = np.random.default_rng(1)
        img = rng.uniform(0.2, 0.8, (8, 8, 3))
        n = rng.normal(0, 1, img.shape)
        assert psnr(img, img + 0.01 * n) > psnr(img, img + 0.05 * n)


def reference_ssim_gray(a, b):
    """Independent windowed implementation with explicit loops."""
    r = np.arange(SSIM_WINDOW) - (SSIM_WINDOW - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * SSIM_SIGMA**2))
    w = np.outer(g, g)
    w /= w.sum()
    c1, c2 = SSIM_K1**2, SSIM_K2**2
    h, wid = a.shape
    vals = []
    for i in range(h - SSIM_WINDOW + 1):
        for j in range(wid - SSIM_WINDOW + 1):
            pa = a[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            pb = b[i : i + SSIM_WINDOW, j : j + SSIM_WINDOW]
            mu_a = np.sum(w * pa)
            mu_b = np.sum(w * pb)
            va = np.sum(w * pa * pa) - mu_a**2
            vb = np.sum(w * pb * pb) - mu_b**2
            cov = np.sum(w * pa * pb) - mu_a * mu_b
            vals.append(
                ((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                / ((mu_a**2 + mu_b**2 + c1) * (va + vb + c2))
            )
    return float(np.mean(vals))


class TestSsim:
    def test_identical_images_score_one(self):
        rng = np.random.default_rng(0)
        img = rng.uniform(0, 1, (12, 12))
        assert ssim(img, img) == pytest.approx(1.0, abs=1e-12)

    def test_constant_images_closed_form(self):
        a = np.full((11, 11), 0.2)
        b = np.full((11, 11), 0.6)
        c1, c2 = SSIM_K1**2, SSIM_K2**2
        expected = ((2 * 0.2 * 0.6 + c1) * c2) / ((0.04 + 0.36 + c1) * c2)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-12)

    def test_matches_loop_reference(self):
        rng = np.random.default_rng(2)
        a = rng.uniform(0, 1, (14, 13))
        b = np.clip(a + rng.normal(0, 0.1, a.shape), 0, 1)
        assert ssim(a, b) == pytest.approx(reference_ssim_gray(a, b), rel=1e-12)

    def test_color_reduces_to_luminance(self):
        rng = np.random.default_rng(3)
        a = rng.uniform(0, 1, (12, 12, 3))
        b = rng.uniform(0, 1, (12, 12, 3))
        assert ssim(a, b) == pytest.approx(ssim(a @ BT601, b @ BT601), abs=1e-14)

    def test_structural_damage_scores_below_one(self):
        rng = np.random.default_rng(4)
        img = rng.uniform(0, 1, (16, 16))
        shifted = np.roll(img, 2, axis=1)
        assert ssim(img, shifted) < 0.9

    def test_too_small_raises(self):
        with pytest.raises(ImageTooSmall):
            ssim(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ssim(np.zeros((12, 12)), np.zeros((12, 13)))

    def test_symmetric(self):
        rng = np.random.default_rng(5)
        a, b = rng.uniform(0, 1, (2, 12, 12))
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-14)


class TestMetricReport:
    def test_rows_and_mean(self):
        r = MetricReport("psnr")
        r.add(0, 30.0)
        r.add(1, 32.5)
        assert r.mean == pytest.approx(31.25)
        assert r.rows() == [("psnr", "0", 30.0), ("psnr", "1", 32.5), ("psnr", "mean", 31.25)]

    def test_mean_with_infinities(self):
        r = MetricReport("psnr")
        r.add(0, float("inf"))
        r.add(1, 30.0)
        assert r.mean == float("inf")
        r2 = MetricReport("err")
        r2.add(0, float("inf"))
        r2.add(1, -1.0)
        assert np.isnan(r2.mean)
        assert np.isnan(MetricReport("empty").mean)

    def test_csv_golden(self, tmp_path):
        r = MetricReport("psnr")
        r.add(0, 30.0)
        r.add(1, 32.5)
        path = tmp_path / "metrics.csv"
        write_metrics_csv(path, r.rows() + [("rot_rmse_deg", "all", 0.125)])
        assert path.read_text() == (
            "metric,frame,value\n"
            "psnr,0,30\n"
            "psnr,1,32.5\n"
            "psnr,mean,31.25\n"
            "rot_rmse_deg,all,0.125\n"
        )

    def test_csv_round_trips_exact_floats(self, tmp_path):
        value = 1.0 / 3.0
        path = tmp_path / "m.csv"
        write_metrics_csv(path, [("x", "0", value)])
        line = path.read_text().splitlines()[1]
        assert float(line.split(",")[2]) == value


def random_poses(n, seed, spread=1.0):
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        out.append(
            se3_exp(
                Twist(omega=rng.uniform(-0.4, 0.4, 3), v=spread * rng.uniform(-1, 1, 3))
            )
        )
    return out


class TestAlignment:
    def test_recovers_applied_similarity(self):
        gt = random_poses(8, seed=0)
        gauge_rot = se3_exp(Twist(omega=np.array([0.3, -0.5, 0.8]), v=np.zeros(3))).rotation
        scale, trans = 1.7, np.array([0.3, -0.2, 0.5])
        est = [
            RigidTransform(
                rotation=gauge_rot.T @ p.rotation,
                translation=gauge_rot.T @ (p.translation - trans) / scale,
            )
            for p in gt
        ]
        s, r, t = align_trajectories(est, gt)
        assert s == pytest.approx(scale, rel=1e-10)
        np.testing.assert_allclose(r, gauge_rot, atol=1e-10)
        np.testing.assert_allclose(t, trans, atol=1e-10)
        rot_rmse, trans_rmse, rel = trajectory_errors(est, gt, scene_depth=2.0)
        assert rot_rmse < 1e-8
        assert trans_rmse < 1e-10
        assert rel == pytest.approx(trans_rmse / 2.0)

    def test_identity_est_is_zero_error(self):
        gt = random_poses(5, seed=1)
        rot_rmse, trans_rmse, rel = trajectory_errors(gt, gt)
        assert rot_rmse == pytest.approx(0.0, abs=1e-8)
        assert trans_rmse == pytest.approx(0.0, abs=1e-12)
        assert rel is None

    def test_alternating_rotation_oracle(self):
        # gt: identity rotations, positions spread along x. est: identical
        # positions but alternating +/- phi rotations about z. The Procrustes
        # accumulator is diagonal positive, so the aligned error per pose is
        # exactly phi and translation error is exactly zero.
        phi = np.deg2rad(2.0)
        gt, est = [], []
        for i in range(6):
            pos = np.array([float(i), 0.0, 0.0])
            gt.append(RigidTransform(rotation=np.eye(3), translation=pos))
            est.append(
                RigidTransform(rotation=rot_z(phi if i % 2 == 0 else -phi), translation=pos)
            )
        rot_rmse, trans_rmse, rel = trajectory_errors(est, gt, scene_depth=4.0)
        assert rot_rmse == pytest.approx(2.0, rel=1e-9)
        assert trans_rmse == pytest.approx(0.0, abs=1e-12)
        assert rel == pytest.approx(0.0, abs=1e-12)

    def test_scale_recovered_from_halved_positions(self):
        gt = []
        rng = np.random.default_rng(2)
        for i in range(5):
            gt.append(
                RigidTransform(rotation=np.eye(3), translation=rng.uniform(-1, 1, 3))
            )
        est = [
            RigidTransform(rotation=p.rotation, translation=p.translation / 2.0)
            for p in gt
        ]
        s, r, t = align_trajectories(est, gt)
        assert s == pytest.approx(2.0, rel=1e-12)
        np.testing.assert_allclose(r, np.eye(3), atol=1e-12)
        _, trans_rmse, _ = trajectory_errors(est, gt)
        assert trans_rmse < 1e-12

    def test_degenerate_positions_fall_back_to_unit_scale(self):
        pose = RigidTransform(rotation=np.eye(3), translation=np.zeros(3))
        s, r, t = align_trajectories([pose, pose], [pose, pose])
        assert s == 1.0

    def test_unaligned_residual_is_reported(self):
        # a perturbation alignment cannot absorb: bend the middle position
        gt = [
            RigidTransform(rotation=np.eye(3), translation=np.array([float(i), 0, 0]))
            for i in range(3)
        ]
        est = [
            RigidTransform(rotation=p.rotation, translation=p.translation.copy())
            for p in gt
        ]
        est[1] = RigidTransform(
            rotation=np.eye(3), translation=np.array([1.0, 0.5, 0.0])
        )
        _, trans_rmse, _ = trajectory_errors(est, gt)
        assert trans_rmse > 0.05

    def test_length_mismatch_and_empty(self):
        gt = random_poses(3, seed=3)
        with pytest.raises(ShapeMismatch):
            align_trajectories(gt[:2], gt)
        with pytest.raises(ShapeMismatch):
            align_trajectories([], [])
