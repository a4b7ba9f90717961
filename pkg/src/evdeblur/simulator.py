"""Synthetic ground-truth generator: procedural scenes, a reference-level
event camera model, and physically consistent blur.

Scenes are analytic (ray-traced in closed form), so ground truth is exact at
any pose and any resolution. The event model latches a per-pixel reference
log-level and emits one event per threshold crossing with a linearly
interpolated sub-frame timestamp, updating the reference by an integer number
of thresholds per frame interval.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import field as fieldmod
from . import spline
from .autodiff import LOG_EPS
from .events import EventStream
from .field import CameraIntrinsics
from .lie import RigidTransform, Twist, se3_exp
from .measurement import BT601, virtual_times
from .spline import SplineTrajectory


class GroundTruthScene:
    """Base for procedural scenes; emits linear intensities in [0,1]."""

    kind = "abstract"
    reference_depth = 1.0  # nominal scene distance, for relative errors

    def render(self, pose: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
        raise NotImplementedError

    def suggested_bounds(self) -> tuple[float, float]:
        """Ray-distance sampling interval that brackets the geometry."""
        return 0.4 * self.reference_depth, 2.0 * self.reference_depth


def _rays(pose: RigidTransform, k: CameraIntrinsics):
    pixels = fieldmod.pixel_grid(k)
    o, d = fieldmod.make_rays(pixels, pose, k)
    return np.asarray(o), np.asarray(d)


def default_plane_texture(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Blur-sensitive plane texture.

    The dominant component's wavelength (~8 px at the default 64 px focal
    length and 2.0 plane depth) is comparable to a moderate-motion blur
    streak, so blurring measurably destroys detail; a mid and a per-channel
    low frequency keep the image from being a bare checkerboard. Values stay
    well inside (0, 1) so log-luminance is smooth.
    """
    hi = 0.24 * np.sin(24.1 * x + 1.3) * np.cos(22.7 * y - 0.6)
    mid = 0.10 * np.sin(8.9 * x - 3.7 * y + 0.4)
    r = 0.58 + hi + mid + 0.06 * np.sin(3.1 * x + 0.9) * np.cos(2.6 * y - 0.4)
    g = 0.58 + hi + mid + 0.06 * np.sin(2.7 * x - 1.7) * np.cos(3.4 * y + 1.1)
    b = 0.58 + hi + mid + 0.06 * np.cos(3.6 * x + 0.3) * np.sin(2.2 * y - 0.8)
    return np.clip(np.stack([r, g, b], axis=-1), 0.0, 1.0)


@dataclass
class TexturedPlane(GroundTruthScene):
    """Infinite textured plane at z = depth, camera looking along +z.

    ``texture_fn`` (mapping plane coordinates to RGB in [0, 1]) overrides the
    default texture; tests use this to build scenes whose per-pixel
    log-luminance paths have known structure.
    """

    depth: float = 2.0
    texture_fn: Callable[[np.ndarray, np.ndarray], np.ndarray] | None = None

    kind = "textured-plane"

    def __post_init__(self):
        self.reference_depth = self.depth

    def texture(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        fn = self.texture_fn or default_plane_texture
        return fn(x, y)

    def suggested_bounds(self) -> tuple[float, float]:
        # normalized ray dirs put the plane at depth/cos(view angle) plus the
        # camera's own excursion; this brackets both with margin
        return 0.65 * self.depth, 1.55 * self.depth

    def render(self, pose: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
        o, d = _rays(pose, k)
        dz = d[:, 2]
        hit = dz > 1e-9
        t = np.where(hit, (self.depth - o[:, 2]) / np.where(hit, dz, 1.0), 0.0)
        px = o[:, 0] + t * d[:, 0]
        py = o[:, 1] + t * d[:, 1]
        img = self.texture(px, py)
        img[~hit] = 0.5
        return img.reshape(k.height, k.width, 3)


@dataclass
class VoxelBoxRoom(GroundTruthScene):
    """Camera inside a textured box with axis-aligned opaque blocks floating
    in front of the far wall; the blocks occlude the walls behind them."""

    half_x: float = 1.3
    half_y: float = 1.1
    z_back: float = -0.6
    z_front: float = 3.2

    kind = "voxel-box-room"
    reference_depth = 2.2

    # (lo, hi, base albedo) per block
    blocks = (
        (np.array([-0.55, -0.35, 1.6]), np.array([-0.15, 0.25, 2.0]), np.array([0.85, 0.25, 0.2])),
        (np.array([0.15, -0.5, 2.1]), np.array([0.6, 0.1, 2.5]), np.array([0.2, 0.7, 0.85])),
        (np.array([-0.1, 0.3, 1.2]), np.array([0.25, 0.65, 1.55]), np.array([0.9, 0.8, 0.2])),
    )

    def _wall_color(self, p: np.ndarray, face: np.ndarray) -> np.ndarray:
        checker = (np.floor(2.5 * p[:, 0]) + np.floor(2.5 * p[:, 1]) + np.floor(2.5 * p[:, 2])) % 2
        base = 0.35 + 0.4 * checker
        tint = np.stack(
            [
                base + 0.12 * np.sin(2.0 * p[:, 0] + face),
                base + 0.12 * np.sin(2.3 * p[:, 1] - face),
                base + 0.12 * np.cos(1.7 * p[:, 2]),
            ],
            axis=-1,
        )
        return np.clip(tint, 0.0, 1.0)

    def render(self, pose: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
        o, d = _rays(pose, k)
        n = len(o)
        lo = np.array([-self.half_x, -self.half_y, self.z_back])
        hi = np.array([self.half_x, self.half_y, self.z_front])
        # exit of the room interior: smallest positive slab-exit distance
        with np.errstate(divide="ignore", invalid="ignore"):
            t_slabs = np.where(d > 0, (hi - o) / d, np.where(d < 0, (lo - o) / d, np.inf))
        face = np.argmin(t_slabs, axis=1)
        t_wall = t_slabs[np.arange(n), face]
        t_hit = t_wall.copy()
        color = self._wall_color(o + t_wall[:, None] * d, face.astype(float))

        for blo, bhi, albedo in self.blocks:
            with np.errstate(divide="ignore", invalid="ignore"):
                t1 = (blo - o) / d
                t2 = (bhi - o) / d
            t_near = np.nanmax(np.minimum(t1, t2), axis=1)
            t_far = np.nanmin(np.maximum(t1, t2), axis=1)
            hit = (t_near < t_far) & (t_near > 1e-6) & (t_near < t_hit)
            if np.any(hit):
                p = o[hit] + t_near[hit, None] * d[hit]
                stripes = 0.7 + 0.3 * np.sin(9.0 * (p[:, 0] + p[:, 1] + p[:, 2]))
                color[hit] = np.clip(albedo * stripes[:, None], 0.0, 1.0)
                t_hit[hit] = t_near[hit]
        return color.reshape(k.height, k.width, 3)


@dataclass
class AnalyticSpheres(GroundTruthScene):
    """A few opaque spheres over a checkered backdrop plane."""

    backdrop_z: float = 4.0

    kind = "analytic-spheres"
    reference_depth = 2.5

    spheres = (
        (np.array([-0.45, -0.1, 2.0]), 0.4, np.array([0.9, 0.3, 0.25])),
        (np.array([0.5, 0.2, 2.6]), 0.5, np.array([0.25, 0.55, 0.9])),
        (np.array([0.05, 0.55, 1.7]), 0.3, np.array([0.3, 0.85, 0.35])),
        (np.array([-0.2, 0.75, 3.0]), 0.45, np.array([0.9, 0.75, 0.2])),
    )

    def render(self, pose: RigidTransform, k: CameraIntrinsics) -> np.ndarray:
        o, d = _rays(pose, k)
        n = len(o)
        t_hit = np.full(n, np.inf)
        color = np.full((n, 3), 0.5)

        dz = d[:, 2]
        plane_ok = dz > 1e-9
        t_plane = np.where(plane_ok, (self.backdrop_z - o[:, 2]) / np.where(plane_ok, dz, 1.0), np.inf)
        p = o + t_plane[:, None] * d
        checker = (np.floor(1.5 * p[:, 0]) + np.floor(1.5 * p[:, 1])) % 2
        back = 0.25 + 0.5 * checker
        color[plane_ok] = np.stack([back, back * 0.95, back * 1.05], axis=-1)[plane_ok].clip(0, 1)
        t_hit[plane_ok] = t_plane[plane_ok]

        for center, radius, albedo in self.spheres:
            oc = o - center
            b = np.sum(oc * d, axis=1)
            disc = b * b - (np.sum(oc * oc, axis=1) - radius * radius)
            ok = disc > 0
            t = -b - np.sqrt(np.where(ok, disc, 0.0))
            hit = ok & (t > 1e-6) & (t < t_hit)
            if np.any(hit):
                normal = (o[hit] + t[hit, None] * d[hit] - center) / radius
                shade = 0.6 + 0.4 * np.sin(7.0 * normal[:, 0]) * np.sin(5.0 * normal[:, 1])
                color[hit] = np.clip(albedo * shade[:, None], 0.0, 1.0)
                t_hit[hit] = t[hit]
        return color.reshape(k.height, k.width, 3)


SCENE_KINDS = {
    "textured-plane": TexturedPlane,
    "voxel-box-room": VoxelBoxRoom,
    "analytic-spheres": AnalyticSpheres,
}


def make_scene(kind: str, **params) -> GroundTruthScene:
    if kind not in SCENE_KINDS:
        raise ValueError(f"unknown scene kind {kind!r}; choose from {sorted(SCENE_KINDS)}")
    return SCENE_KINDS[kind](**params)


# ---------------------------------------------------------------------------
# ground-truth motion


def make_gt_trajectory(
    seed: int,
    rot_deg: float = 4.0,
    translation: float = 0.08,
    curvature: float = 0.3,
) -> SplineTrajectory:
    """Smooth random SE(3) spline around the identity pose.

    ``rot_deg`` and ``translation`` are the approximate realized magnitudes
    across the exposure (the spline only traces the middle third of the knot
    span, so knot increments are 3x the target). ``curvature`` bends the path
    away from a straight twist; 0 gives near-linear motion.
    """
    rng = np.random.default_rng(seed)

    def unit(v):
        return v / np.linalg.norm(v)

    rot_dir = unit(rng.standard_normal(3))
    rot_curve = unit(np.cross(rot_dir, rng.standard_normal(3)))
    trans_dir = unit(rng.standard_normal(3))
    trans_curve = unit(np.cross(trans_dir, rng.standard_normal(3)))
    rot_total = np.deg2rad(rot_deg)

    knots = []
    for i in range(4):
        s = float(i)
        bump = np.sin(np.pi * i / 3.0)
        omega = rot_dir * rot_total * s + rot_curve * rot_total * curvature * bump
        v = trans_dir * translation * s + trans_curve * translation * curvature * bump
        knots.append(se3_exp(Twist(omega=omega, v=v)))
    return SplineTrajectory(knots=knots, t0=0.0, dt=1.0)


# ---------------------------------------------------------------------------
# measurement synthesis from ground truth


def _gray_log(img: np.ndarray, eps_log: float) -> np.ndarray:
    return np.log(img @ BT601 + eps_log)


def events_from_log_frames(
    log_frames,
    times: np.ndarray,
    contrast: float,
    width: int,
    height: int,
) -> EventStream:
    """Core event generator over an iterable of per-pixel log-intensity
    frames of shape (height, width), sampled at strictly increasing
    ``times``.

    Each pixel latches a reference level; a frame-to-frame change of ``d``
    relative to the reference emits ``floor(|d| / contrast)`` events of one
    polarity, timestamped by linear interpolation of the crossing levels
    within the frame interval, and advances the reference by exactly the
    emitted whole number of thresholds.
    """
    if not contrast > 0:
        raise ValueError("contrast threshold must be positive")
    times = np.asarray(times, dtype=np.float64)
    it = iter(log_frames)
    try:
        prev_log = np.asarray(next(it), dtype=np.float64).ravel()
    except StopIteration:
        raise ValueError("need at least 2 frames") from None
    ref = prev_log.copy()

    ts, xs, ys, ps = [], [], [], []
    xg, yg = np.meshgrid(np.arange(width), np.arange(height))
    xg, yg = xg.ravel(), yg.ravel()

    f = 0
    for frame in it:
        f += 1
        cur_log = np.asarray(frame, dtype=np.float64).ravel()
        diff = cur_log - ref
        sgn = np.sign(diff)
        count = np.floor(np.abs(diff) / contrast).astype(np.int64)
        idx = np.nonzero(count > 0)[0]
        if len(idx):
            c = count[idx]
            total = int(c.sum())
            owner = np.repeat(np.arange(len(idx)), c)
            # per-event crossing number j = 1..count within its pixel
            j = np.arange(total) - np.repeat(np.concatenate([[0], np.cumsum(c)[:-1]]), c) + 1
            pix = idx[owner]
            level = ref[pix] + sgn[pix] * j * contrast
            denom = cur_log[pix] - prev_log[pix]
            frac = np.clip(
                np.where(denom != 0, (level - prev_log[pix]) / np.where(denom != 0, denom, 1.0), 1.0),
                0.0,
                1.0,
            )
            ts.append(times[f - 1] + frac * (times[f] - times[f - 1]))
            xs.append(xg[pix])
            ys.append(yg[pix])
            ps.append(sgn[pix].astype(np.int8))
            ref[idx] += sgn[idx] * c * contrast
        prev_log = cur_log

    if f < 1:
        raise ValueError("need at least 2 frames")
    if not ts:
        return EventStream.empty(width, height, contrast)
    t = np.concatenate(ts)
    order = np.argsort(t, kind="stable")
    stream = EventStream(
        t=t[order],
        x=np.concatenate(xs)[order].astype(np.int64),
        y=np.concatenate(ys)[order].astype(np.int64),
        p=np.concatenate(ps)[order],
        width=width,
        height=height,
        contrast=contrast,
    )
    stream.validate()
    return stream


def simulate_events(
    scene: GroundTruthScene,
    traj: SplineTrajectory,
    k: CameraIntrinsics,
    frames: int = 200,
    contrast: float = 0.2,
    eps_log: float = LOG_EPS,
) -> EventStream:
    """Render ``frames`` uniformly timed views over the exposure and convert
    their log-luminance sequence into an event stream."""
    if frames < 2:
        raise ValueError("need at least 2 frames")
    times = np.linspace(0.0, 1.0, frames)
    logs = (
        _gray_log(scene.render(spline.pose_at(t, traj), k), eps_log) for t in times
    )
    return events_from_log_frames(logs, times, contrast, k.width, k.height)


def simulate_blur(
    scene: GroundTruthScene,
    traj: SplineTrajectory,
    k: CameraIntrinsics,
    n_gt: int,
):
    """Mean of ``n_gt`` uniformly timed sharp renders, plus the renders."""
    if n_gt < 2:
        raise ValueError("need at least 2 frames to form blur")
    sharps = [scene.render(spline.pose_at(t, traj), k) for t in virtual_times(n_gt)]
    return np.mean(sharps, axis=0), sharps


def make_dataset(
    scene: GroundTruthScene,
    traj: SplineTrajectory,
    k: CameraIntrinsics,
    out_dir,
    frames: int = 200,
    contrast: float = 0.2,
    near: float | None = None,
    far: float | None = None,
    gt_frames: int = 19,
    traj_samples: int = 128,
    seeds: dict | None = None,
    stream: EventStream | None = None,
):
    """Simulate one capture and write it as a self-describing dataset
    directory: blurry image (+float sidecar), binary event file, ground-truth
    trajectory samples, sharp reference frames, and a JSON manifest.

    ``stream`` short-circuits event simulation when the caller already ran it
    (e.g. to inspect the stream before committing files to disk).

    Returns (manifest, event stream).
    """
    from pathlib import Path

    from . import datasets

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "sharp").mkdir(exist_ok=True)

    if near is None or far is None:
        lo, hi = scene.suggested_bounds()
        near = lo if near is None else near
        far = hi if far is None else far

    if stream is None:
        stream = simulate_events(scene, traj, k, frames=frames, contrast=contrast)
    blur, _ = simulate_blur(scene, traj, k, frames)
    datasets.write_image(out / "blur.png", blur)
    datasets.write_events_binary(out / "events.evt", stream)

    gt_times = virtual_times(gt_frames)
    sharp_paths = []
    for i, t in enumerate(gt_times):
        name = f"sharp/frame_{i:03d}.png"
        datasets.write_image(out / name, scene.render(spline.pose_at(t, traj), k))
        sharp_paths.append(name)

    sample_times = np.linspace(0.0, 1.0, traj_samples)
    datasets.write_trajectory(
        out / "gt_trajectory.txt",
        sample_times,
        [spline.pose_at(t, traj) for t in sample_times],
    )

    manifest = datasets.DatasetManifest(
        width=k.width,
        height=k.height,
        fx=k.fx,
        fy=k.fy,
        cx=k.cx,
        cy=k.cy,
        near=near,
        far=far,
        contrast=contrast,
        event_file="events.evt",
        blur_image="blur.png",
        gt_trajectory="gt_trajectory.txt",
        gt_sharp_frames=sharp_paths,
        gt_frame_times=[float(t) for t in gt_times],
        scene_kind=scene.kind,
        scene_depth=float(scene.reference_depth),
        frames=frames,
        seeds=seeds or {},
    )
    datasets.write_manifest(out / "manifest.json", manifest)
    return manifest, stream
