"""Figure rendering for run reports.

Every report-producing command writes PNG figures next to its delimited
output so a run directory is reviewable without re-running anything. The Agg
backend is forced: figures render to files, never to a display.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def loss_figure(history: list, path) -> None:
    """Loss components and learning rate over iterations, log-scaled."""
    steps = [h["step"] for h in history]
    total = [h["total"] for h in history]
    photo = [h["photometric"] for h in history]
    event = [h["event"] for h in history]
    lr = [h["lr"] for h in history]

    fig, (ax, ax_lr) = plt.subplots(
        2, 1, figsize=(7, 6), sharex=True, height_ratios=[3, 1]
    )
    ax.plot(steps, total, label="total", lw=1.2)
    ax.plot(steps, photo, label="photometric", lw=0.8, alpha=0.8)
    if np.isfinite(event).any():
        ax.plot(steps, event, label="event", lw=0.8, alpha=0.8)
    ax.set_yscale("log")
    ax.set_ylabel("loss")
    ax.legend(loc="upper right", fontsize=8)
    ax.grid(True, alpha=0.3)

    ax_lr.plot(steps, lr, color="tab:gray", lw=1.0)
    ax_lr.set_yscale("log")
    ax_lr.set_ylabel("lr")
    ax_lr.set_xlabel("iteration")
    ax_lr.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def frames_figure(panels: list, path, per_row: int = 3) -> None:
    """Grid of labeled image panels: [(title, image in [0,1]), ...]."""
    n = len(panels)
    rows = (n + per_row - 1) // per_row
    fig, axes = plt.subplots(rows, per_row, figsize=(3.2 * per_row, 3.4 * rows))
    axes = np.atleast_1d(axes).ravel()
    for ax in axes[n:]:
        ax.axis("off")
    for ax, (title, img) in zip(axes, panels):
        ax.imshow(np.clip(img, 0.0, 1.0))
        ax.set_title(title, fontsize=9)
        ax.axis("off")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def trajectory_figure(times, est_poses, gt_poses, path) -> None:
    """Aligned-position components and per-sample errors over time."""
    from .metrics import align_trajectories

    scale, rot, trans = align_trajectories(est_poses, gt_poses)
    p_est = np.stack(
        [scale * rot @ np.asarray(p.translation) + trans for p in est_poses]
    )
    p_gt = np.stack([np.asarray(p.translation) for p in gt_poses])
    ang = []
    for e, g in zip(est_poses, gt_poses):
        delta = (rot @ np.asarray(e.rotation)).T @ np.asarray(g.rotation)
        cos = np.clip((np.trace(delta) - 1.0) / 2.0, -1.0, 1.0)
        ang.append(np.rad2deg(np.arccos(cos)))

    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    labels = "xyz"
    for i in range(3):
        axes[0].plot(times, p_gt[:, i], "-", lw=1.0, label=f"gt {labels[i]}")
        axes[0].plot(times, p_est[:, i], "--", lw=1.0, label=f"est {labels[i]}")
    axes[0].set_title("position (aligned)", fontsize=9)
    axes[0].set_xlabel("t")
    axes[0].legend(fontsize=6, ncol=2)
    axes[0].grid(True, alpha=0.3)

    axes[1].plot(times, np.linalg.norm(p_est - p_gt, axis=1), lw=1.0)
    axes[1].set_title("position error", fontsize=9)
    axes[1].set_xlabel("t")
    axes[1].grid(True, alpha=0.3)

    axes[2].plot(times, ang, lw=1.0)
    axes[2].set_title("rotation error (deg)", fontsize=9)
    axes[2].set_xlabel("t")
    axes[2].grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
