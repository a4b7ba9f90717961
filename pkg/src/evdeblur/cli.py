"""Command-line interface: ``simulate | train | render | eval``.

Each command works under a run directory and leaves it self-describing: the
fully resolved config, logs, CSV metrics, and PNG outputs all land next to
each other, so a run can be reproduced from the directory alone.

Exit codes: 0 success, 1 usage/config/data errors, 2 degenerate-data warnings
(promoted to errors under ``--strict``).

Only the standard library is imported at module level; numpy and the heavy
modules load inside the command functions, after the thread count has been
pinned into the environment.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from pathlib import Path

THREADS_ENV = "EVDEBLUR_THREADS"

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DEGENERATE = 2


class MissingGroundTruth(FileNotFoundError):
    """The dataset lacks the ground truth the command needs."""


class _Parser(argparse.ArgumentParser):
    """argparse reserves exit code 2 for usage errors; this CLI uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _pin_threads(count: int | None) -> None:
    """Export the BLAS/OpenMP thread count; ``--threads 1`` makes runs
    bitwise reproducible. Must happen before numpy is first imported."""
    if count is None:
        env = os.environ.get(THREADS_ENV)
        if env is None:
            return
        count = int(env)
    if count < 1:
        raise ValueError("thread count must be >= 1")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(count)
    if "numpy" in sys.modules:
        print(
            "warning: numpy was already imported; thread pinning may not take effect",
            file=sys.stderr,
        )


def _overrides(args: argparse.Namespace, fields: dict[str, str]) -> dict:
    """Collect explicitly passed flag values, mapped to config field names."""
    out = {}
    for attr, field in fields.items():
        value = getattr(args, attr)
        if value is not None:
            out[field] = value
    return out


def _resolved(cls, config_path: str | None, overrides: dict):
    from .config import read_config

    cfg = read_config(config_path, cls) if config_path else cls()
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()
    return cfg


def _intrinsics_from_meta(meta: dict):
    from .field import CameraIntrinsics

    return CameraIntrinsics(
        width=int(meta["width"]),
        height=int(meta["height"]),
        fx=float(meta["fx"]),
        fy=float(meta["fy"]),
        cx=float(meta["cx"]),
        cy=float(meta["cy"]),
    )


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args: argparse.Namespace) -> int:
    from .config import SimulateConfig, write_config
    from .datasets import read_image
    from .field import CameraIntrinsics
    from .metrics import psnr
    from .simulator import make_dataset, make_gt_trajectory, make_scene, simulate_events

    cfg = _resolved(
        SimulateConfig,
        args.config,
        _overrides(
            args,
            {
                "scene": "scene",
                "width": "width",
                "height": "height",
                "focal": "focal",
                "frames": "frames",
                "contrast": "contrast",
                "rot_deg": "rot_deg",
                "translation": "translation",
                "curvature": "curvature",
                "gt_frames": "gt_frames",
                "seed": "seed",
            },
        ),
    )
    out = Path(args.out)
    scene = make_scene(cfg.scene)
    traj = make_gt_trajectory(
        seed=cfg.seed,
        rot_deg=cfg.rot_deg,
        translation=cfg.translation,
        curvature=cfg.curvature,
    )
    k = CameraIntrinsics(
        width=cfg.width,
        height=cfg.height,
        fx=cfg.focal,
        fy=cfg.focal,
        cx=cfg.width / 2.0,
        cy=cfg.height / 2.0,
    )

    stream = simulate_events(
        scene, traj, k, frames=cfg.frames, contrast=cfg.contrast
    )
    if len(stream) == 0:
        if args.strict:
            print("error: empty event stream (static trajectory?)", file=sys.stderr)
            return EXIT_DEGENERATE
        print("warning: empty event stream (static trajectory?)", file=sys.stderr)

    manifest, _ = make_dataset(
        scene,
        traj,
        k,
        out,
        frames=cfg.frames,
        contrast=cfg.contrast,
        near=args.near,
        far=args.far,
        gt_frames=cfg.gt_frames,
        traj_samples=cfg.traj_samples,
        seeds={"trajectory": cfg.seed},
        stream=stream,
    )
    write_config(out / "simulate_config.json", cfg)

    blur = read_image(out / manifest.blur_image)
    mid = read_image(out / manifest.gt_sharp_frames[cfg.gt_frames // 2])
    print(f"dataset written to {out}")
    print(f"events: {len(stream)}")
    print(f"blur PSNR vs mid-exposure sharp frame: {psnr(blur, mid):.2f} dB")
    return EXIT_DEGENERATE if len(stream) == 0 else EXIT_OK


# ---------------------------------------------------------------------------
# train


def cmd_train(args: argparse.Namespace) -> int:
    from .config import RunConfig, write_config
    from .datasets import load_dataset
    from .train import train

    overrides = _overrides(
        args,
        {
            "n_virtual": "n_virtual",
            "alpha": "alpha",
            "beta": "beta",
            "iterations": "iterations",
            "lr0": "lr0",
            "lr0_traj": "lr0_traj",
            "decay": "decay",
            "batch_color": "batch_color",
            "batch_event": "batch_event",
            "checkpoint_every": "checkpoint_every",
            "log_every": "log_every",
            "trajectory": "trajectory",
            "hidden_layers": "hidden_layers",
            "hidden_width": "hidden_width",
            "pe_pos": "pe_levels_pos",
            "pe_dir": "pe_levels_dir",
            "n_samples": "n_samples",
            "near": "near",
            "far": "far",
            "seed": "seed",
            "dtype": "dtype",
        },
    )
    from .config import read_config

    cfg = read_config(args.config, RunConfig) if args.config else RunConfig()
    if args.full_scale:
        cfg = cfg.full_scale()
    if args.white_background:
        overrides["white_background"] = True
    if overrides:
        cfg = dataclasses.replace(cfg, **overrides)
    cfg.validate()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config(out / "run_config.json", cfg)
    data = load_dataset(args.data)

    log_path = out / "train.log"
    log_file = open(log_path, "a")

    def progress(msg: str) -> None:
        print(msg, flush=True)
        log_file.write(msg + "\n")
        log_file.flush()

    try:
        result = train(data, cfg, out, resume=args.resume, progress=progress)
    finally:
        log_file.close()
    print(f"final checkpoint: {result.checkpoint_path}")
    if result.zero_norm_skips:
        print(f"event term skipped on {result.zero_norm_skips} iterations (zero-norm windows)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# render


def cmd_render(args: argparse.Namespace) -> int:
    from .datasets import load_checkpoint, write_image
    from .config import RunConfig
    from .field import render_image
    from .spline import OutOfDomain
    from .train import make_pose_fn

    if (args.times is None) == (args.n_frames is None):
        raise ValueError("give exactly one of --times or --n-frames")
    if args.times is not None:
        try:
            times = [float(s) for s in args.times.split(",") if s.strip()]
        except ValueError:
            raise ValueError(f"--times must be comma-separated numbers, got {args.times!r}")
        if not times:
            raise ValueError("--times is empty")
    else:
        if args.n_frames < 1:
            raise ValueError("--n-frames must be >= 1")
        if args.n_frames == 1:
            times = [0.5]
        else:
            times = [i / (args.n_frames - 1) for i in range(args.n_frames)]
    for t in times:
        if not 0.0 <= t <= 1.0:
            raise OutOfDomain(f"t={t} outside [0, 1]")

    ck = load_checkpoint(args.checkpoint)
    meta = ck.config
    run = RunConfig.from_dict(meta.get("run"), source="checkpoint")
    k = _intrinsics_from_meta(meta)
    settings = run.render_settings(
        float(meta["near"]), float(meta["far"]), stratified=False
    )
    field = ck.scene_field()
    pose_fn = make_pose_fn(ck.knot_twists.ravel(), ck.trajectory_mode)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, t in enumerate(times):
        name = f"frame_{i:03d}.png"
        write_image(out / name, render_image(field, pose_fn(t), k, settings))
        rows.append((i, t, name))
        print(f"t={t:.4f} -> {out / name}")
    with open(out / "frames.csv", "w") as f:
        f.write("frame,time,path\n")
        for i, t, name in rows:
            f.write(f"{i},{t!r},{name}\n")
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args: argparse.Namespace) -> int:
    import numpy as np

    from .config import RunConfig
    from .datasets import load_checkpoint, load_dataset, read_image, read_trajectory
    from .field import render_image
    from .metrics import MetricReport, psnr, ssim, trajectory_errors, write_metrics_csv
    from .reporting import frames_figure, trajectory_figure
    from .train import make_pose_fn

    data_dir = Path(args.data)
    blur, _stream, manifest = load_dataset(data_dir)
    if not manifest.gt_sharp_frames or not manifest.gt_frame_times:
        raise MissingGroundTruth(f"{data_dir}: manifest lists no ground-truth sharp frames")
    if not manifest.gt_trajectory:
        raise MissingGroundTruth(f"{data_dir}: manifest lists no ground-truth trajectory")

    ck = load_checkpoint(args.checkpoint)
    meta = ck.config
    run = RunConfig.from_dict(meta.get("run"), source="checkpoint")
    k = _intrinsics_from_meta(meta)
    settings = run.render_settings(
        float(meta["near"]), float(meta["far"]), stratified=False
    )
    field = ck.scene_field()
    pose_fn = make_pose_fn(ck.knot_twists.ravel(), ck.trajectory_mode)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    psnr_recon = MetricReport("psnr_recon")
    ssim_recon = MetricReport("ssim_recon")
    psnr_base = MetricReport("psnr_baseline_blur")
    ssim_base = MetricReport("ssim_baseline_blur")
    panels = []
    n_frames = len(manifest.gt_sharp_frames)
    for i, (rel, t) in enumerate(zip(manifest.gt_sharp_frames, manifest.gt_frame_times)):
        gt = read_image(data_dir / rel)
        recon = render_image(field, pose_fn(float(t)), k, settings)
        psnr_recon.add(i, psnr(recon, gt))
        ssim_recon.add(i, ssim(recon, gt))
        psnr_base.add(i, psnr(blur, gt))
        ssim_base.add(i, ssim(blur, gt))
        if i in (0, n_frames // 2, n_frames - 1):
            panels.append((f"GT t={t:.2f}", gt))
            panels.append((f"recon t={t:.2f}", recon))
            panels.append(("blurry input", blur))

    gt_times, gt_poses = read_trajectory(data_dir / manifest.gt_trajectory)
    est_poses = [pose_fn(float(t)) for t in gt_times]
    scene_depth = manifest.scene_depth or 1.0
    rot_rmse, trans_rmse, trans_rel = trajectory_errors(est_poses, gt_poses, scene_depth)

    rows = (
        psnr_recon.rows()
        + ssim_recon.rows()
        + psnr_base.rows()
        + ssim_base.rows()
        + [
            ("trajectory_rot_rmse_deg", "all", rot_rmse),
            ("trajectory_trans_rmse", "all", trans_rmse),
            ("trajectory_trans_rmse_rel_depth", "all", trans_rel),
        ]
    )
    write_metrics_csv(out / "metrics.csv", rows)
    frames_figure(panels, out / "frames.png", per_row=3)
    trajectory_figure(np.asarray(gt_times), est_poses, gt_poses, out / "trajectory.png")

    print(f"PSNR  recon {psnr_recon.mean:6.2f} dB   blurry baseline {psnr_base.mean:6.2f} dB"
          f"   margin {psnr_recon.mean - psnr_base.mean:+.2f} dB")
    print(f"SSIM  recon {ssim_recon.mean:6.4f}      blurry baseline {ssim_base.mean:6.4f}")
    print(f"trajectory: rotation RMSE {rot_rmse:.3f} deg, "
          f"translation RMSE {trans_rmse:.5f} ({100 * trans_rel:.2f}% of scene depth)")
    print(f"report written to {out / 'metrics.csv'}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_simulate(sub) -> None:
    p = sub.add_parser("simulate", help="generate a synthetic blur + event dataset")
    p.add_argument("--out", required=True, help="dataset output directory")
    p.add_argument("--config", help="SimulateConfig JSON file")
    p.add_argument(
        "--scene",
        help="scene kind (textured-plane, voxel-box-room, analytic-spheres)",
    )
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--focal", type=float, help="focal length in pixels")
    p.add_argument("--frames", type=int, help="simulation frames across the exposure")
    p.add_argument("--contrast", type=float, help="event threshold in log luminance")
    p.add_argument("--rot-deg", dest="rot_deg", type=float,
                   help="rotation across the exposure, degrees")
    p.add_argument("--translation", type=float, help="translation across the exposure")
    p.add_argument("--curvature", type=float, help="motion curvature (0 = near-linear)")
    p.add_argument("--gt-frames", dest="gt_frames", type=int,
                   help="ground-truth sharp frames to write")
    p.add_argument("--seed", type=int)
    p.add_argument("--near", type=float, help="manifest near bound override")
    p.add_argument("--far", type=float, help="manifest far bound override")
    p.add_argument("--strict", action="store_true",
                   help="treat degenerate data (empty event stream) as an error")
    p.set_defaults(fn=cmd_simulate)


def _add_train(sub) -> None:
    p = sub.add_parser("train", help="jointly fit the scene field and camera trajectory")
    p.add_argument("--data", required=True, help="dataset directory (from simulate)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--config", help="RunConfig JSON file")
    p.add_argument("--resume", help="checkpoint file to resume from")
    p.add_argument("--full-scale", action="store_true",
                   help="80K iterations with the full-size field and batches")
    p.add_argument("--n-virtual", dest="n_virtual", type=int)
    p.add_argument("--alpha", type=float, help="event window length fraction")
    p.add_argument("--beta", type=float, help="event loss weight")
    p.add_argument("--iterations", type=int)
    p.add_argument("--lr0", type=float, help="scene-field base learning rate")
    p.add_argument("--lr0-traj", dest="lr0_traj", type=float,
                   help="trajectory base learning rate (default: same as --lr0)")
    p.add_argument("--decay", type=float)
    p.add_argument("--batch-color", dest="batch_color", type=int)
    p.add_argument("--batch-event", dest="batch_event", type=int)
    p.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    p.add_argument("--log-every", dest="log_every", type=int)
    p.add_argument("--trajectory", choices=["spline", "linear"])
    p.add_argument("--hidden-layers", dest="hidden_layers", type=int)
    p.add_argument("--hidden-width", dest="hidden_width", type=int)
    p.add_argument("--pe-pos", dest="pe_pos", type=int,
                   help="positional encoding levels for positions")
    p.add_argument("--pe-dir", dest="pe_dir", type=int,
                   help="positional encoding levels for view directions")
    p.add_argument("--n-samples", dest="n_samples", type=int)
    p.add_argument("--near", type=float)
    p.add_argument("--far", type=float)
    p.add_argument("--white-background", action="store_true")
    p.add_argument("--seed", type=int)
    p.add_argument("--dtype", choices=["float32", "float64"])
    p.set_defaults(fn=cmd_train)


def _add_render(sub) -> None:
    p = sub.add_parser("render", help="render sharp frames from a checkpoint")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--out", required=True, help="frame output directory")
    p.add_argument("--times", help="comma-separated timestamps in [0, 1]")
    p.add_argument("--n-frames", dest="n_frames", type=int,
                   help="render this many uniformly spaced frames")
    p.set_defaults(fn=cmd_render)


def _add_eval(sub) -> None:
    p = sub.add_parser("eval", help="score a checkpoint against dataset ground truth")
    p.add_argument("--checkpoint", required=True, help="checkpoint file")
    p.add_argument("--data", required=True, help="dataset directory with ground truth")
    p.add_argument("--out", required=True, help="report output directory")
    p.set_defaults(fn=cmd_eval)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="evdeblur",
        description="Recover a sharp scene and the in-exposure camera motion "
        "from one motion-blurred image plus its event stream.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        help=f"BLAS/OpenMP thread count (default ${THREADS_ENV} if set); "
        "1 guarantees bitwise reproducibility",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_simulate(sub)
    _add_train(sub)
    _add_render(sub)
    _add_eval(sub)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _pin_threads(args.threads)
        return args.fn(args)
    except BrokenPipeError:
        return EXIT_ERROR
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports, not raises
        from .config import ConfigError
        from .datasets import ParseError, VersionMismatch
        from .events import ValidationError
        from .spline import OutOfDomain

        known = (
            ConfigError,
            ParseError,
            VersionMismatch,
            ValidationError,
            OutOfDomain,
            MissingGroundTruth,
            FileNotFoundError,
            NotADirectoryError,
            PermissionError,
            ValueError,
        )
        if isinstance(exc, known):
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_ERROR
        raise


if __name__ == "__main__":
    sys.exit(main())
