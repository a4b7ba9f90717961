"""Radiance field (positional encoding + MLP) and the volume renderer.

The field maps a world point and a unit view direction to (rgb, density).
Parameters live in one flat vector so the optimizer and checkpoints treat the
field as a single parameter group; layers are views into that vector. All
forward code is written against the dispatching math in
:mod:`evdeblur.autodiff` and accepts tape variables anywhere an array is
accepted.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import autodiff as ad
from .autodiff import value_of
from .lie import RigidTransform


@dataclass
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")


@dataclass
class RenderSettings:
    near: float
    far: float
    n_samples: int = 64
    stratified: bool = False
    white_background: bool = False

    def __post_init__(self):
        if not self.near < self.far:
            raise ValueError("near must be below far")
        if self.n_samples < 2:
            raise ValueError("need at least 2 samples per ray")


@dataclass
class Ray:
    origin: np.ndarray
    dir: np.ndarray  # unit

    def __post_init__(self):
        n = np.linalg.norm(value_of(self.dir))
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"ray direction norm {n} is not 1")


@dataclass
class FieldArch:
    hidden_layers: int = 4
    hidden_width: int = 128
    pe_levels_pos: int = 6
    pe_levels_dir: int = 2

    @property
    def pos_dim(self) -> int:
        return 3 + 6 * self.pe_levels_pos

    @property
    def dir_dim(self) -> int:
        return 3 + 6 * self.pe_levels_dir

    def table(self) -> list[tuple[str, int, int, slice, slice]]:
        """(name, fan_in, fan_out, weight slice, bias slice) per layer."""
        rows = []
        off = 0

        def entry(name, fi, fo):
            nonlocal off
            w = slice(off, off + fi * fo)
            b = slice(off + fi * fo, off + fi * fo + fo)
            off = b.stop
            rows.append((name, fi, fo, w, b))

        entry("trunk0", self.pos_dim, self.hidden_width)
        for i in range(1, self.hidden_layers):
            entry(f"trunk{i}", self.hidden_width, self.hidden_width)
        entry("density", self.hidden_width, 1)
        entry("color", self.hidden_width + self.dir_dim, 3)
        return rows

    @property
    def param_count(self) -> int:
        last = self.table()[-1]
        return last[4].stop


@dataclass
class SceneField:
    arch: FieldArch
    params: np.ndarray = dc_field(repr=False, default=None)

    def __post_init__(self):
        if self.params is not None and value_of(self.params).size != self.arch.param_count:
            raise ValueError(
                f"params length {value_of(self.params).size} does not match "
                f"architecture count {self.arch.param_count}"
            )

    @classmethod
    def create(cls, arch: FieldArch, seed: int = 0, dtype=np.float32) -> "SceneField":
        return cls(arch=arch, params=init_params(arch, seed, dtype))


def init_params(arch: FieldArch, seed: int, dtype=np.float32) -> np.ndarray:
    """Kaiming-style uniform weights scaled by fan-in; zero biases."""
    rng = np.random.default_rng(seed)
    out = np.zeros(arch.param_count, dtype=dtype)
    for _, fi, fo, wsl, _ in arch.table():
        bound = np.sqrt(6.0 / fi)
        out[wsl] = rng.uniform(-bound, bound, fi * fo).astype(dtype)
    return out


def positional_encode(v, levels: int):
    """[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(...)]."""
    parts = [v]
    for lvl in range(levels):
        w = (2.0**lvl) * np.pi
        parts.append(ad.sin(v * w))
        parts.append(ad.cos(v * w))
    if len(parts) == 1:
        return v
    return ad.concat(parts, axis=-1)


def field_eval_batch(params, arch: FieldArch, x, d):
    """MLP forward over N points. Returns (color (N,3), density (N,))."""
    layers = {name: (fi, fo, wsl, bsl) for name, fi, fo, wsl, bsl in arch.table()}

    def linear(h, name):
        fi, fo, wsl, bsl = layers[name]
        w = ad.reshape(params[wsl], (fi, fo))
        return ad.affine(h, w, params[bsl])

    h = positional_encode(x, arch.pe_levels_pos)
    for i in range(arch.hidden_layers):
        h = ad.softplus(linear(h, f"trunk{i}"))
    sigma = ad.softplus(ad.reshape(linear(h, "density"), (-1,)))
    color_in = ad.concat([h, positional_encode(d, arch.pe_levels_dir)], axis=-1)
    color = ad.sigmoid(linear(color_in, "color"))
    return color, sigma


def field_eval(fieldnet: SceneField, x, d):
    """Single-point query. Returns (rgb (3,), sigma scalar)."""
    c, s = field_eval_batch(
        fieldnet.params, fieldnet.arch, value_of(x).reshape(1, 3), value_of(d).reshape(1, 3)
    )
    return value_of(c)[0], float(value_of(s)[0])


# ---------------------------------------------------------------------------
# rays


def make_rays(pixels: np.ndarray, pose: RigidTransform, k: CameraIntrinsics):
    """Batched pinhole rays. ``pixels`` is (N,2) integer or float pixel
    coordinates; +0.5 centers them on the grid. Returns (origins, dirs)."""
    px = np.asarray(pixels, dtype=float)
    cam = np.stack(
        [
            (px[:, 0] + 0.5 - k.cx) / k.fx,
            (px[:, 1] + 0.5 - k.cy) / k.fy,
            np.ones(len(px)),
        ],
        axis=1,
    )
    dirs = cam @ ad.transpose(pose.rotation)
    norms = ad.sqrt(ad.sum(dirs * dirs, axis=1, keepdims=True))
    dirs = dirs / norms
    origins = np.zeros((len(px), 3)) + pose.translation  # broadcast the center
    return origins, dirs


def make_ray(pixel, pose: RigidTransform, k: CameraIntrinsics) -> Ray:
    o, d = make_rays(np.asarray(pixel, dtype=float)[None, :], pose, k)
    return Ray(origin=value_of(o)[0], dir=value_of(d)[0])


def pixel_grid(k: CameraIntrinsics) -> np.ndarray:
    """All pixel coordinates, row-major, shape (H*W, 2) as (x, y)."""
    ys, xs = np.mgrid[0 : k.height, 0 : k.width]
    return np.stack([xs.ravel(), ys.ravel()], axis=1).astype(float)


# ---------------------------------------------------------------------------
# volume rendering


def sample_depths(
    n_rays: int, settings: RenderSettings, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Per-ray sample depths (N, S): stratified within equal bins, or the bin
    midpoints when not stratified."""
    edges = np.linspace(settings.near, settings.far, settings.n_samples + 1)
    width = edges[1] - edges[0]
    if settings.stratified:
        if rng is None:
            raise ValueError("stratified sampling needs an rng")
        jitter = rng.uniform(0.0, 1.0, (n_rays, settings.n_samples))
        return edges[:-1][None, :] + jitter * width
    mids = 0.5 * (edges[:-1] + edges[1:])
    return np.broadcast_to(mids, (n_rays, settings.n_samples)).copy()


def deltas_from_depths(depths: np.ndarray, far: float) -> np.ndarray:
    """Inter-sample distances with the last interval closed at ``far``."""
    return np.concatenate([np.diff(depths, axis=1), far - depths[:, -1:]], axis=1)


def render_rays(
    params,
    arch: FieldArch,
    origins,
    dirs,
    settings: RenderSettings,
    depths: np.ndarray,
    return_aux: bool = False,
):
    """Volume-render a ray batch. ``depths`` comes from sample_depths (it is
    a constant of the differentiated graph). Returns rgb (N,3)."""
    n, s = depths.shape
    pos = ad.reshape(origins, (n, 1, 3)) + depths[:, :, None] * ad.reshape(dirs, (n, 1, 3))
    pos = ad.reshape(pos, (n * s, 3))
    drep = ad.repeat_rows(dirs, s)
    color, sigma = field_eval_batch(params, arch, pos, drep)
    color = ad.reshape(color, (n, s, 3))
    sigma = ad.reshape(sigma, (n, s))

    delta = deltas_from_depths(depths, settings.far)
    a = sigma * delta
    inc = ad.cumsum(a, axis=1)
    excl = ad.concat([np.zeros((n, 1)), inc[:, :-1]], axis=1)
    trans = ad.exp(-excl)  # T_i before sample i
    weights = trans * (1.0 - ad.exp(-a))
    rgb = ad.sum(ad.reshape(weights, (n, s, 1)) * color, axis=1)
    t_end = ad.exp(-inc[:, -1:])  # transmittance past the last sample
    if settings.white_background:
        rgb = rgb + t_end
    if return_aux:
        return rgb, {"weights": weights, "t_end": t_end, "trans": trans}
    return rgb


def render_ray(
    fieldnet: SceneField,
    ray: Ray,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    depths = sample_depths(1, settings, rng)
    rgb = render_rays(
        fieldnet.params,
        fieldnet.arch,
        ray.origin[None, :],
        ray.dir[None, :],
        settings,
        depths,
    )
    return value_of(rgb)[0]


def render_image(
    fieldnet: SceneField,
    pose: RigidTransform,
    k: CameraIntrinsics,
    settings: RenderSettings,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Full-frame render, row-major, float in [0,1], shape (H, W, 3)."""
    pixels = pixel_grid(k)
    origins, dirs = make_rays(pixels, pose, k)
    depths = sample_depths(len(pixels), settings, rng)
    rgb = render_rays(fieldnet.params, fieldnet.arch, origins, dirs, settings, depths)
    return value_of(rgb).reshape(k.height, k.width, 3)
