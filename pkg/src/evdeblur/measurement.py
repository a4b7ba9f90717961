"""Differentiable synthesis of the two measurement modalities and the loss.

A blurry pixel is the mean of virtual sharp renders across the exposure; an
event pixel is the guarded log-luminance difference between the renders at
the two window endpoints. Measured events are accumulated with unit contrast:
the constant cancels under the batch L2 normalization, which is what makes
the loss independent of the sensor's unknown threshold.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import field as fieldmod
from . import spline
from .autodiff import value_of
from .events import EventStream
from .field import CameraIntrinsics, RenderSettings, SceneField
from .lie import RigidTransform
from .optim import ShapeMismatch
from .spline import SplineTrajectory

BT601 = np.array([0.299, 0.587, 0.114])


class ZeroNorm(ValueError):
    """Event batch with no brightness change; caller resamples the window."""


@dataclass
class BlurModel:
    n_virtual: int = 19

    def __post_init__(self):
        if self.n_virtual < 2:
            raise ValueError("need at least 2 virtual images")


@dataclass
class EventWindow:
    t_start: float
    t_end: float

    def __post_init__(self):
        if not (0.0 <= self.t_start < self.t_end <= 1.0):
            raise ValueError(f"bad window [{self.t_start}, {self.t_end}]")

    @property
    def alpha(self) -> float:
        return self.t_end - self.t_start


@dataclass
class LossWeights:
    beta: float = 0.1

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta >= 0):
            raise ValueError("beta must be finite and non-negative")


def virtual_times(n: int) -> np.ndarray:
    """Uniform virtual-image timestamps across the exposure, endpoints in."""
    return np.linspace(0.0, 1.0, n)


def luminance(rgb):
    """BT.601 gray value; works on (..., 3) arrays and tape variables."""
    return ad.sum(rgb * BT601, axis=-1)


def sample_event_window(alpha: float, rng: np.random.Generator) -> EventWindow:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("alpha must be in (0, 1]")
    t0 = float(rng.uniform(0.0, 1.0 - alpha))
    return EventWindow(t_start=t0, t_end=t0 + alpha)


def accumulate_events(
    stream: EventStream,
    window: EventWindow,
    contrast: float,
    pixels: np.ndarray,
) -> np.ndarray:
    """Signed polarity sum times ``contrast`` at each requested pixel, over
    events with t_start < t < t_end (strict bounds)."""
    i0 = np.searchsorted(stream.t, window.t_start, side="right")
    i1 = np.searchsorted(stream.t, window.t_end, side="left")
    img = np.zeros((stream.height, stream.width), dtype=np.float64)
    np.add.at(img, (stream.y[i0:i1], stream.x[i0:i1]), stream.p[i0:i1].astype(np.float64))
    px = np.asarray(pixels, dtype=int)
    return contrast * img[px[:, 1], px[:, 0]]


def normalize_event_image(e):
    """Divide by the L2 norm over the sampled pixel batch."""
    n = ad.norm(e)
    if float(value_of(n)) < 1e-12:
        raise ZeroNorm("event batch norm below 1e-12")
    return e / n


# ---------------------------------------------------------------------------
# batched synthesis cores (the training loop feeds tape variables through
# these; the single-pixel convenience operations below wrap them)


def _render_stacked(params, arch, poses, k, pixels, settings, rng):
    """Render the same pixel batch under several poses in one pass.

    Stacking keeps the matrix shapes large (one gemm instead of one per
    pose), which is what makes CPU training viable. Returns a variable or
    array of shape (len(poses), n_pixels, 3).
    """
    n = len(pixels)
    origins, dirs = [], []
    for pose in poses:
        o, d = fieldmod.make_rays(pixels, pose, k)
        origins.append(o)
        dirs.append(d)
    origins = ad.concat(origins, axis=0)
    dirs = ad.concat(dirs, axis=0)
    depths = fieldmod.sample_depths(len(poses) * n, settings, rng)
    rgb = fieldmod.render_rays(params, arch, origins, dirs, settings, depths)
    return ad.reshape(rgb, (len(poses), n, 3))


def synth_blur_pixels(
    params,
    arch: fieldmod.FieldArch,
    poses: list[RigidTransform],
    k: CameraIntrinsics,
    pixels: np.ndarray,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
):
    """Mean of the virtual sharp renders at ``poses`` for each pixel."""
    stacked = _render_stacked(params, arch, poses, k, pixels, settings, rng)
    return ad.sum(stacked, axis=0) * (1.0 / len(poses))


def synth_event_pixels(
    params,
    arch: fieldmod.FieldArch,
    pose_start: RigidTransform,
    pose_end: RigidTransform,
    k: CameraIntrinsics,
    pixels: np.ndarray,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
):
    """Guarded log-luminance difference between the window-endpoint renders."""
    stacked = _render_stacked(
        params, arch, [pose_start, pose_end], k, pixels, settings, rng
    )
    gray = luminance(stacked)
    return ad.log(gray[1]) - ad.log(gray[0])


# ---------------------------------------------------------------------------
# single-pixel operations


def synth_blur_pixel(
    fieldnet: SceneField,
    traj: SplineTrajectory,
    k: CameraIntrinsics,
    pixel,
    model: BlurModel,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    poses = [spline.pose_at(t, traj) for t in virtual_times(model.n_virtual)]
    out = synth_blur_pixels(
        fieldnet.params,
        fieldnet.arch,
        poses,
        k,
        np.asarray(pixel, dtype=float)[None, :],
        settings,
        rng,
    )
    return value_of(out)[0]


def synth_event_pixel(
    fieldnet: SceneField,
    traj: SplineTrajectory,
    k: CameraIntrinsics,
    pixel,
    window: EventWindow,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
) -> float:
    out = synth_event_pixels(
        fieldnet.params,
        fieldnet.arch,
        spline.pose_at(window.t_start, traj),
        spline.pose_at(window.t_end, traj),
        k,
        np.asarray(pixel, dtype=float)[None, :],
        settings,
        rng,
    )
    return float(value_of(out)[0])


def total_loss(blur_pred, blur_meas, event_pred_n, event_meas_n, w: LossWeights):
    """Mean-squared photometric term + beta * mean-squared event term.

    Both event inputs must already be batch-normalized; passing raw
    accumulations here would silently reintroduce the unknown threshold.
    With beta = 0 the event inputs are ignored entirely and may be None.
    """
    if value_of(blur_pred).shape != value_of(blur_meas).shape:
        raise ShapeMismatch(
            f"blur batch {value_of(blur_pred).shape} vs {value_of(blur_meas).shape}"
        )
    d = blur_pred - blur_meas
    loss = ad.mean(d * d)
    if w.beta > 0:
        if value_of(event_pred_n).shape != value_of(event_meas_n).shape:
            raise ShapeMismatch(
                f"event batch {value_of(event_pred_n).shape} vs {value_of(event_meas_n).shape}"
            )
        e = event_pred_n - event_meas_n
        loss = loss + w.beta * ad.mean(e * e)
    return loss
