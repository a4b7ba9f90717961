"""Measurement synthesis and the joint loss: blur-as-mean, event log
differences, batch normalization, and threshold invariance."""

import numpy as np
import pytest

from evdeblur import autodiff as ad
from evdeblur.events import EventStream
from evdeblur.field import CameraIntrinsics, FieldArch, RenderSettings, SceneField
from evdeblur.lie import RigidTransform, Twist, se3_exp
from evdeblur.measurement import (
    BT601,
    BlurModel,
    EventWindow,
    LossWeights,
    ZeroNorm,
    accumulate_events,
    luminance,
    normalize_event_image,
    sample_event_window,
    synth_blur_pixel,
    synth_blur_pixels,
    synth_event_pixels,
    total_loss,
    virtual_times,
)
from evdeblur.optim import ShapeMismatch
from evdeblur.spline import SplineTrajectory

K = CameraIntrinsics(fx=8.0, fy=8.0, cx=2.0, cy=2.0, width=4, height=4)
SETTINGS = RenderSettings(near=0.5, far=2.5, n_samples=6, stratified=False)


def tiny_net(seed=0):
    return SceneField.create(
        FieldArch(hidden_layers=1, hidden_width=8, pe_levels_pos=2, pe_levels_dir=1),
        seed=seed,
    )


def stream_from_rows(rows, width=4, height=4, contrast=0.2):
    rows = sorted(rows)
    t, x, y, p = (np.array(c) for c in zip(*rows))
    return EventStream(
        t=t.astype(np.float64),
        x=x.astype(np.int64),
        y=y.astype(np.int64),
        p=p.astype(np.int8),
        width=width,
        height=height,
        contrast=contrast,
    )


class TestBasics:
    def test_virtual_times_uniform_with_endpoints(self):
        t = virtual_times(5)
        np.testing.assert_allclose(t, [0.0, 0.25, 0.5, 0.75, 1.0], atol=1e-15)

    def test_blur_model_validation(self):
        with pytest.raises(ValueError):
            BlurModel(n_virtual=1)

    def test_luminance_oracle(self):
        rgb = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [1.0, 1.0, 1.0]])
        np.testing.assert_allclose(luminance(rgb), [0.299, 0.587, 1.0], atol=1e-12)
        assert BT601.sum() == pytest.approx(1.0)

    def test_event_window_validation(self):
        with pytest.raises(ValueError):
            EventWindow(t_start=0.5, t_end=0.5)
        with pytest.raises(ValueError):
            EventWindow(t_start=-0.1, t_end=0.5)
        assert EventWindow(0.2, 0.5).alpha == pytest.approx(0.3)

    def test_sample_event_window_bounds_and_length(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            w = sample_event_window(0.1, rng)
            assert 0.0 <= w.t_start and w.t_end <= 1.0
            assert w.alpha == pytest.approx(0.1)
        with pytest.raises(ValueError):
            sample_event_window(0.0, rng)


class TestAccumulation:
    def test_hand_counted_window(self):
        stream = stream_from_rows(
            [
                (0.10, 1, 2, +1),
                (0.20, 1, 2, +1),
                (0.30, 1, 2, -1),
                (0.40, 3, 0, +1),
                (0.90, 1, 2, +1),
            ],
            contrast=0.2,
        )
        window = EventWindow(t_start=0.15, t_end=0.5)
        pixels = np.array([[1, 2], [3, 0], [0, 0]])
        acc = accumulate_events(stream, window, contrast=0.2, pixels=pixels)
        # pixel (1,2): +1 at .2, -1 at .3 -> 0 events net; (3,0): +1; (0,0): none
        np.testing.assert_allclose(acc, [0.0, 0.2, 0.0], atol=1e-15)

    def test_window_bounds_strict(self):
        stream = stream_from_rows([(0.2, 0, 0, +1), (0.5, 0, 0, +1)], contrast=1.0)
        inside = accumulate_events(
            stream, EventWindow(0.2, 0.5), contrast=1.0, pixels=np.array([[0, 0]])
        )
        # both boundary events excluded: t must satisfy start < t < end
        np.testing.assert_allclose(inside, [0.0], atol=1e-15)
        covering = accumulate_events(
            stream, EventWindow(0.1, 0.6), contrast=1.0, pixels=np.array([[0, 0]])
        )
        np.testing.assert_allclose(covering, [2.0], atol=1e-15)

    def test_contrast_scales_output(self):
        stream = stream_from_rows([(0.3, 2, 1, -1)], contrast=0.5)
        px = np.array([[2, 1]])
        a1 = accumulate_events(stream, EventWindow(0.0, 1.0), 0.5, px)
        a2 = accumulate_events(stream, EventWindow(0.0, 1.0), 1.0, px)
        np.testing.assert_allclose(a2, 2.0 * a1, atol=1e-15)

    def test_normalize_unit_norm_and_zero_raise(self):
        e = np.array([3.0, 4.0])
        n = normalize_event_image(e)
        np.testing.assert_allclose(n, [0.6, 0.8], atol=1e-15)
        with pytest.raises(ZeroNorm):
            normalize_event_image(np.zeros(4))


class TestSynthesis:
    def test_blur_is_mean_of_virtual_renders(self):
        from evdeblur.field import make_rays, render_rays, sample_depths

        net = tiny_net()
        poses = [
            se3_exp(Twist(omega=np.array([0.0, 0.0, 0.05 * i]), v=np.array([0.02 * i, 0, 0])))
            for i in range(3)
        ]
        pixels = np.array([[1.0, 1.0], [2.0, 3.0]])
        got = synth_blur_pixels(net.params, net.arch, poses, K, pixels, SETTINGS)

        singles = []
        for pose in poses:
            o, d = make_rays(pixels, pose, K)
            depths = sample_depths(2, SETTINGS)
            singles.append(render_rays(net.params, net.arch, o, d, SETTINGS, depths))
        np.testing.assert_allclose(got, np.mean(singles, axis=0), atol=1e-12)

    def test_event_synthesis_is_log_luminance_difference(self):
        from evdeblur.field import make_rays, render_rays, sample_depths

        net = tiny_net(seed=4)
        p0 = RigidTransform.identity()
        p1 = se3_exp(Twist(omega=np.zeros(3), v=np.array([0.05, 0.0, 0.0])))
        pixels = np.array([[1.0, 2.0], [3.0, 0.0]])
        got = synth_event_pixels(net.params, net.arch, p0, p1, K, pixels, SETTINGS)

        def lum(pose):
            o, d = make_rays(pixels, pose, K)
            depths = sample_depths(2, SETTINGS)
            rgb = render_rays(net.params, net.arch, o, d, SETTINGS, depths)
            return np.asarray(rgb) @ BT601

        expected = np.log(lum(p1) + ad.LOG_EPS) - np.log(lum(p0) + ad.LOG_EPS)
        np.testing.assert_allclose(got, expected, atol=1e-12)

    def test_single_pixel_wrapper_matches_batch(self):
        net = tiny_net(seed=5)
        knots = [
            se3_exp(Twist(omega=np.array([0, 0, 0.02 * i]), v=np.array([0.01 * i, 0, 0])))
            for i in range(4)
        ]
        traj = SplineTrajectory(knots=knots)
        out = synth_blur_pixel(net, traj, K, np.array([1.0, 1.0]), BlurModel(3), SETTINGS)
        assert out.shape == (3,)
        assert np.all(out >= 0.0) and np.all(out <= 1.0)


class TestLoss:
    def test_photometric_oracle(self):
        pred = np.array([[0.5, 0.5, 0.5], [0.2, 0.2, 0.2]])
        meas = np.array([[0.4, 0.5, 0.5], [0.2, 0.0, 0.2]])
        w = LossWeights(beta=0.0)
        # mean over all entries of squared difference
        expected = ((0.1) ** 2 + (0.2) ** 2) / 6.0
        assert float(total_loss(pred, meas, None, None, w)) == pytest.approx(expected)

    def test_combined_oracle(self):
        pred = np.zeros((2, 3))
        meas = np.ones((2, 3)) * 0.1
        ep = np.array([1.0, 0.0]) / 1.0
        em = np.array([0.0, 1.0])
        w = LossWeights(beta=0.5)
        expected = 0.01 + 0.5 * np.mean((ep - em) ** 2)
        assert float(total_loss(pred, meas, ep, em, w)) == pytest.approx(expected)

    def test_shape_mismatch_raises(self):
        w = LossWeights(beta=0.1)
        with pytest.raises(ShapeMismatch):
            total_loss(np.zeros((2, 3)), np.zeros((3, 3)), None, None, LossWeights(0.0))
        with pytest.raises(ShapeMismatch):
            total_loss(np.zeros((2, 3)), np.zeros((2, 3)), np.zeros(3), np.zeros(4), w)

    def test_weights_validation(self):
        with pytest.raises(ValueError):
            LossWeights(beta=-0.1)
        with pytest.raises(ValueError):
            LossWeights(beta=float("nan"))

    def test_contrast_threshold_invariance(self):
        # scaling the measured accumulation by any k>0 changes nothing after
        # normalization: the loss never sees the sensor's threshold
        rng = np.random.default_rng(11)
        raw = rng.standard_normal(24)
        pred_n = normalize_event_image(rng.standard_normal(24))
        pred_b = rng.uniform(0, 1, (4, 3))
        meas_b = rng.uniform(0, 1, (4, 3))
        w = LossWeights(beta=0.1)
        base_e = None
        base_l = None
        for k in (0.1, 1.0, 7.3):
            e_n = np.asarray(normalize_event_image(k * raw))
            loss = float(total_loss(pred_b, meas_b, pred_n, e_n, w))
            if base_e is None:
                base_e, base_l = e_n, loss
            else:
                assert np.abs(e_n - base_e).max() < 1e-9
                assert abs(loss - base_l) < 1e-9

    def test_beta_zero_ignores_event_inputs(self):
        pred = np.zeros((2, 3))
        meas = np.zeros((2, 3))
        assert float(total_loss(pred, meas, None, None, LossWeights(0.0))) == 0.0
