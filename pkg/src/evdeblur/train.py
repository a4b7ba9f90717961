"""Joint recovery loop: one blurry image + one event stream in, a sharp
scene field and a continuous camera trajectory out.

Each iteration samples a fresh pixel batch for the photometric term and a
fresh time window + pixel batch for the event term, renders both through the
differentiable pipeline, and takes one Adam step per parameter group (field
weights and trajectory twists). A single random generator drives every draw,
so a run is reproducible from (config, dataset) and resumable bit-identically
from a checkpoint.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from . import datasets, reporting, spline
from .autodiff import Tape, value_of
from .config import RunConfig, write_config
from .events import EventStream
from .field import SceneField, pixel_grid
from .lie import Twist, se3_exp
from .measurement import (
    LossWeights,
    ZeroNorm,
    accumulate_events,
    normalize_event_image,
    sample_event_window,
    synth_blur_pixels,
    synth_event_pixels,
    total_loss,
    virtual_times,
)
from .optim import AdamState, adam_step, decayed_lr
from .spline import SplineTrajectory


def twist_count(mode: str) -> int:
    """Trajectory parameter rows: 4 spline control knots or 2 endpoints."""
    if mode == "spline":
        return 4
    if mode == "linear":
        return 2
    raise ValueError(f"unknown trajectory mode {mode!r}")


def make_pose_fn(knot_twists, mode: str):
    """Build pose lookup t -> camera-to-world transform from twist rows.

    Works both on plain arrays and on tape variables (training), because the
    underlying geometry ops are dual-mode. The spline's relative twists are
    computed once and shared across lookups.
    """
    rows = [Twist.from_vector(knot_twists[6 * i : 6 * i + 6]) for i in range(twist_count(mode))]
    poses = [se3_exp(r) for r in rows]
    if mode == "linear":
        start, end = poses
        return lambda t: spline.pose_at_linear(t, start, end)
    traj = SplineTrajectory(knots=poses, t0=0.0, dt=1.0)
    rel = spline.relative_twists(traj)
    return lambda t: spline.pose_at(t, traj, rel)


@dataclass
class TrainResult:
    fieldnet: SceneField
    knot_twists: np.ndarray
    trajectory_mode: str
    history: list
    zero_norm_skips: int
    checkpoint_path: Path
    out_dir: Path

    def pose_fn(self):
        return make_pose_fn(self.knot_twists.ravel(), self.trajectory_mode)


@dataclass
class _RunState:
    params: np.ndarray
    twists: np.ndarray
    adam_scene: AdamState
    adam_traj: AdamState
    start_step: int = 0
    history: list = dc_field(default_factory=list)
    zero_norm_skips: int = 0


def _init_state(cfg: RunConfig, rng: np.random.Generator, dtype) -> _RunState:
    fieldnet = SceneField.create(cfg.arch(), seed=cfg.seed, dtype=dtype)
    n_rows = twist_count(cfg.trajectory)
    twists = rng.uniform(0.0, cfg.knot_init_magnitude, n_rows * 6).astype(dtype)
    return _RunState(
        params=fieldnet.params,
        twists=twists,
        adam_scene=AdamState(
            lr0=cfg.lr0, total_steps=cfg.iterations, decay_target_frac=cfg.decay
        ),
        adam_traj=AdamState(
            lr0=cfg.traj_lr0(), total_steps=cfg.iterations, decay_target_frac=cfg.decay
        ),
    )


def _resume_state(resume_path, cfg: RunConfig, rng: np.random.Generator, dtype) -> _RunState:
    ck = datasets.load_checkpoint(resume_path, expect_arch=cfg.arch())
    if ck.trajectory_mode != cfg.trajectory:
        raise datasets.VersionMismatch(
            f"checkpoint trajectory mode {ck.trajectory_mode!r} != config {cfg.trajectory!r}"
        )
    rng.bit_generator.state = ck.rng_state
    return _RunState(
        params=ck.field_params.astype(dtype, copy=False),
        twists=ck.knot_twists.ravel().astype(dtype, copy=False),
        adam_scene=ck.adam_scene,
        adam_traj=ck.adam_traj,
        start_step=ck.step,
    )


def _checkpoint(path, cfg, state, rng, manifest, near, far):
    meta = {
        "run": cfg.to_dict(),
        "near": near,
        "far": far,
        "width": manifest.width,
        "height": manifest.height,
        "fx": manifest.fx,
        "fy": manifest.fy,
        "cx": manifest.cx,
        "cy": manifest.cy,
    }
    datasets.save_checkpoint(
        path,
        arch=cfg.arch(),
        field_params=state.params,
        knot_twists=state.twists.reshape(-1, 6),
        trajectory_mode=cfg.trajectory,
        adam_scene=state.adam_scene,
        adam_traj=state.adam_traj,
        step=state.start_step,
        rng_state=rng.bit_generator.state,
        config=meta,
    )


def train(
    data,
    cfg: RunConfig,
    out_dir,
    resume=None,
    progress=None,
) -> TrainResult:
    """Run the joint optimization and write all run artifacts under out_dir.

    ``data`` is a dataset directory / manifest path, or an already loaded
    (blur, events, manifest) triple. ``resume`` continues bit-identically
    from a checkpoint written by this function.
    """
    cfg.validate()
    if isinstance(data, (str, Path)):
        blur, stream, manifest = datasets.load_dataset(data)
    else:
        blur, stream, manifest = data
    if not isinstance(stream, EventStream):
        raise TypeError("expected an event stream as the second data element")

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "checkpoints").mkdir(exist_ok=True)
    write_config(out / "run_config.json", cfg)

    k = manifest.intrinsics()
    near = cfg.near if cfg.near is not None else manifest.near
    far = cfg.far if cfg.far is not None else manifest.far
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    settings = cfg.render_settings(near, far, stratified=True)

    rng = np.random.default_rng(cfg.seed)
    state = (
        _resume_state(resume, cfg, rng, dtype)
        if resume is not None
        else _init_state(cfg, rng, dtype)
    )

    grid = pixel_grid(k).astype(np.float64)
    blur_flat = blur.reshape(-1, 3)
    vt = virtual_times(cfg.n_virtual)
    n_px = k.width * k.height
    t_begin = time.monotonic()

    for step in range(state.start_step, cfg.iterations):
        tape = Tape(dtype=dtype)
        p_var = tape.leaf(state.params)
        kn_var = tape.leaf(state.twists)
        pose_fn = make_pose_fn(kn_var, cfg.trajectory)

        sel_c = rng.integers(0, n_px, cfg.batch_color)
        pixels_c = grid[sel_c]
        poses = [pose_fn(t) for t in vt]
        blur_pred = synth_blur_pixels(p_var, cfg.arch(), poses, k, pixels_c, settings, rng)
        blur_meas = blur_flat[sel_c].astype(dtype)

        ev_pred_n = ev_meas_n = None
        event_used = False
        if cfg.beta > 0:
            for _ in range(cfg.zero_norm_retries + 1):
                window = sample_event_window(cfg.alpha, rng)
                sel_e = rng.integers(0, n_px, cfg.batch_event)
                pixels_e = grid[sel_e]
                e_meas = accumulate_events(stream, window, 1.0, pixels_e)
                try:
                    ev_meas_n = normalize_event_image(e_meas)
                    break
                except ZeroNorm:
                    ev_meas_n = None
            if ev_meas_n is not None:
                pred_e = synth_event_pixels(
                    p_var, cfg.arch(), pose_fn(window.t_start), pose_fn(window.t_end),
                    k, pixels_e, settings, rng,
                )
                try:
                    ev_pred_n = normalize_event_image(pred_e)
                    event_used = True
                except ZeroNorm:
                    ev_pred_n = None
            if not event_used:
                state.zero_norm_skips += 1

        weights = LossWeights(beta=cfg.beta if event_used else 0.0)
        loss = total_loss(blur_pred, blur_meas, ev_pred_n, ev_meas_n, weights)
        tape.backward(loss)

        lr_now = decayed_lr(
            state.adam_scene.lr0,
            state.adam_scene.step,
            state.adam_scene.total_steps,
            state.adam_scene.decay_target_frac,
        )
        state.params, state.adam_scene = adam_step(state.params, p_var.grad, state.adam_scene)
        state.twists, state.adam_traj = adam_step(state.twists, kn_var.grad, state.adam_traj)
        state.start_step = step + 1

        photo = float(np.mean((value_of(blur_pred) - value_of(blur_meas)) ** 2))
        event = (
            float(np.mean((value_of(ev_pred_n) - value_of(ev_meas_n)) ** 2))
            if event_used
            else float("nan")
        )
        state.history.append(
            {
                "step": step,
                "total": float(value_of(loss)),
                "photometric": photo,
                "event": event,
                "lr": lr_now,
                "event_used": int(event_used),
            }
        )
        tape.dispose()
        if progress is not None and (
            step % cfg.log_every == 0 or step + 1 == cfg.iterations
        ):
            msg = (
                f"iter {step:6d}  loss {state.history[-1]['total']:.6f}  "
                f"photo {photo:.6f}  event "
                + (f"{event:.6f}" if event_used else "—")
                + f"  lr {lr_now:.2e}  [{time.monotonic() - t_begin:7.1f}s]"
            )
            progress(msg)
        if (step + 1) % cfg.checkpoint_every == 0 and step + 1 < cfg.iterations:
            _checkpoint(
                out / "checkpoints" / f"step_{step + 1:06d}.bin",
                cfg, state, rng, manifest, near, far,
            )

    final_path = out / "checkpoint.bin"
    _checkpoint(final_path, cfg, state, rng, manifest, near, far)

    rows = [
        (
            h["step"], h["total"], h["photometric"], h["event"],
            h["lr"], h["event_used"],
        )
        for h in state.history
    ]
    with open(out / "loss.csv", "w") as f:
        f.write("step,total,photometric,event,lr,event_used\n")
        for r in rows:
            f.write(",".join(str(v) for v in r) + "\n")

    twists_2d = state.twists.reshape(-1, 6)
    pose_fn = make_pose_fn(twists_2d.ravel().astype(np.float64), cfg.trajectory)
    times = np.linspace(0.0, 1.0, 128)
    datasets.write_trajectory(
        out / "est_trajectory.txt", times, [pose_fn(t) for t in times]
    )
    if state.history:
        reporting.loss_figure(state.history, out / "loss.png")

    return TrainResult(
        fieldnet=SceneField(arch=cfg.arch(), params=state.params),
        knot_twists=twists_2d,
        trajectory_mode=cfg.trajectory,
        history=state.history,
        zero_norm_skips=state.zero_norm_skips,
        checkpoint_path=final_path,
        out_dir=out,
    )
