"""Image quality metrics and gauge-aligned trajectory error.

Joint recovery of a scene and a trajectory from a single capture is only
defined up to a global similarity (the world frame and its scale are not
observable), so trajectory errors are computed after a closed-form alignment:
rotation by orthogonal Procrustes over the pose rotations, then scale and
translation from the position clouds.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .measurement import BT601
from .optim import ShapeMismatch

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
SSIM_L = 1.0


class ImageTooSmall(ValueError):
    """Image is smaller than the structural-similarity window."""


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for images in [0, 1]; identical
    inputs give float('inf')."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"psnr: shapes {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return -10.0 * np.log10(mse)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def _windowed_mean(img: np.ndarray, w: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, w.shape)
    return np.einsum("ijkl,kl->ij", view, w)


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean structural similarity over all fully valid windows (no padding).

    Color inputs are reduced to luminance first; images must be at least the
    window size on each side.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"ssim: shapes {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a = a @ BT601
        b = b @ BT601
    if a.ndim != 2:
        raise ValueError("ssim expects (H, W) or (H, W, 3) images")
    if a.shape[0] < SSIM_WINDOW or a.shape[1] < SSIM_WINDOW:
        raise ImageTooSmall(f"need at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape}")

    w = _gaussian_window()
    mu_a = _windowed_mean(a, w)
    mu_b = _windowed_mean(b, w)
    var_a = _windowed_mean(a * a, w) - mu_a * mu_a
    var_b = _windowed_mean(b * b, w) - mu_b * mu_b
    cov = _windowed_mean(a * b, w) - mu_a * mu_b
    c1 = (SSIM_K1 * SSIM_L) ** 2
    c2 = (SSIM_K2 * SSIM_L) ** 2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-frame metric values plus their mean, serializable as CSV rows."""

    name: str
    frames: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def add(self, frame, value: float) -> None:
        self.frames.append(frame)
        self.values.append(float(value))

    @property
    def mean(self) -> float:
        finite = [v for v in self.values if np.isfinite(v)]
        if not self.values:
            return float("nan")
        if len(finite) < len(self.values):
            return float("inf") if all(v > 0 for v in self.values) else float("nan")
        return float(np.mean(self.values))

    def rows(self) -> list:
        out = [(self.name, str(f), v) for f, v in zip(self.frames, self.values)]
        out.append((self.name, "mean", self.mean))
        return out


def write_metrics_csv(path, rows) -> None:
    """Write ``metric,frame,value`` rows (value formatted repr-exact)."""
    with open(path, "w") as f:
        f.write("metric,frame,value\n")
        for metric, frame, value in rows:
            f.write(f"{metric},{frame},{float(value):.17g}\n")


# ---------------------------------------------------------------------------
# trajectory error under gauge alignment


def align_trajectories(est_poses, gt_poses):
    """Closed-form similarity (s, R, t) mapping estimated poses onto ground
    truth: rotations via orthogonal Procrustes on sum(R_gt @ R_est^T),
    then scale and translation on the position clouds.
    Degenerate position spread falls back to s = 1."""
    if len(est_poses) != len(gt_poses) or not est_poses:
        raise ShapeMismatch("pose lists must be equal length and non-empty")
    acc = np.zeros((3, 3))
    for e, g in zip(est_poses, gt_poses):
        acc += np.asarray(g.rotation) @ np.asarray(e.rotation).T
    u, _, vt = np.linalg.svd(acc)
    d = np.sign(np.linalg.det(u @ vt))
    rot = u @ np.diag([1.0, 1.0, d]) @ vt

    p_est = np.stack([np.asarray(p.translation) for p in est_poses])
    p_gt = np.stack([np.asarray(p.translation) for p in gt_poses])
    mu_e = p_est.mean(axis=0)
    mu_g = p_gt.mean(axis=0)
    e_c = (p_est - mu_e) @ rot.T
    g_c = p_gt - mu_g
    denom = float(np.sum(e_c * e_c))
    scale = float(np.sum(e_c * g_c) / denom) if denom > 1e-12 else 1.0
    trans = mu_g - scale * rot @ mu_e
    return scale, rot, trans


def trajectory_errors(est_poses, gt_poses, scene_depth: float | None = None):
    """RMSE rotation (degrees) and translation after gauge alignment.

    Returns (rot_rmse_deg, trans_rmse, trans_rmse_relative) where the
    relative value divides by ``scene_depth`` (None when not provided).
    """
    scale, rot, trans = align_trajectories(est_poses, gt_poses)
    rot_sq, trans_sq = [], []
    for e, g in zip(est_poses, gt_poses):
        r_aligned = rot @ np.asarray(e.rotation)
        delta = r_aligned.T @ np.asarray(g.rotation)
        # geodesic angle, tolerant of tiny orthonormality drift
        cos = (np.trace(delta) - 1.0) / 2.0
        ang = float(np.arccos(np.clip(cos, -1.0, 1.0)))
        rot_sq.append(ang * ang)
        p_aligned = scale * rot @ np.asarray(e.translation) + trans
        err = p_aligned - np.asarray(g.translation)
        trans_sq.append(float(err @ err))
    rot_rmse = float(np.rad2deg(np.sqrt(np.mean(rot_sq))))
    trans_rmse = float(np.sqrt(np.mean(trans_sq)))
    rel = trans_rmse / scene_depth if scene_depth else None
    return rot_rmse, trans_rmse, rel
