"""Run configuration: every tunable with a validated default.

Configs load from JSON with full defaulting — a file supplies only the keys it
wants to override; unknown keys are rejected. Every command writes the fully
resolved config next to its outputs so runs are reproducible from the run
directory alone.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from .field import FieldArch, RenderSettings


class ConfigError(ValueError):
    """Invalid, out-of-range, or unknown configuration input."""


def _load_into(cls, data: dict | None, source: str):
    if data is None:
        return cls()
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: expected a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{source}: unknown keys {sorted(unknown)}")
    cfg = cls(**data)
    cfg.validate()
    return cfg


def _require(cond: bool, msg: str):
    if not cond:
        raise ConfigError(msg)


@dataclass
class RunConfig:
    """Tunables for the joint scene + trajectory optimization."""

    # measurement model
    n_virtual: int = 19          # sharp renders averaged into the blur estimate
    alpha: float = 0.1           # event window length as a fraction of exposure
    beta: float = 0.1            # event-loss weight
    # optimization
    iterations: int = 5000
    lr0: float = 5e-3
    lr0_traj: float | None = None  # trajectory-group rate; None = same as lr0
    decay: float = 0.1           # lr multiplier reached at the final iteration
    batch_color: int = 128
    batch_event: int = 192
    zero_norm_retries: int = 10
    checkpoint_every: int = 1000
    log_every: int = 50
    # trajectory representation
    trajectory: str = "spline"   # "spline" (4 control knots) or "linear" (2 poses)
    knot_count: int = 4
    knot_init_magnitude: float = 1e-4
    # scene field architecture (desk scale; --full-scale raises these)
    hidden_layers: int = 2
    hidden_width: int = 48
    pe_levels_pos: int = 5
    pe_levels_dir: int = 2
    # rendering
    n_samples: int = 12
    near: float | None = None    # defaults to the dataset manifest values
    far: float | None = None
    white_background: bool = False
    # reproducibility
    seed: int = 0
    dtype: str = "float32"

    def validate(self) -> None:
        _require(self.n_virtual >= 2, "n_virtual must be >= 2")
        _require(0.0 < self.alpha < 1.0, "alpha must be in (0, 1)")
        _require(self.beta >= 0.0, "beta must be >= 0")
        _require(self.iterations >= 1, "iterations must be >= 1")
        _require(self.lr0 > 0.0, "lr0 must be positive")
        if self.lr0_traj is not None:
            _require(self.lr0_traj > 0.0, "lr0_traj must be positive")
        _require(0.0 < self.decay <= 1.0, "decay must be in (0, 1]")
        _require(self.batch_color >= 1, "batch_color must be >= 1")
        _require(self.batch_event >= 1, "batch_event must be >= 1")
        _require(self.zero_norm_retries >= 0, "zero_norm_retries must be >= 0")
        _require(self.checkpoint_every >= 1, "checkpoint_every must be >= 1")
        _require(self.log_every >= 1, "log_every must be >= 1")
        _require(self.trajectory in ("spline", "linear"),
                 "trajectory must be 'spline' or 'linear'")
        _require(self.knot_count == 4,
                 "knot_count must be 4 (one cubic segment spans the exposure)")
        _require(self.knot_init_magnitude >= 0.0, "knot_init_magnitude must be >= 0")
        _require(self.hidden_layers >= 1, "hidden_layers must be >= 1")
        _require(self.hidden_width >= 1, "hidden_width must be >= 1")
        _require(self.pe_levels_pos >= 0, "pe_levels_pos must be >= 0")
        _require(self.pe_levels_dir >= 0, "pe_levels_dir must be >= 0")
        _require(self.n_samples >= 2, "n_samples must be >= 2")
        if self.near is not None or self.far is not None:
            _require(self.near is not None and self.far is not None,
                     "near and far must be given together")
            _require(0 < self.near < self.far, "need 0 < near < far")
        _require(self.dtype in ("float32", "float64"),
                 "dtype must be 'float32' or 'float64'")

    def arch(self) -> FieldArch:
        return FieldArch(
            hidden_layers=self.hidden_layers,
            hidden_width=self.hidden_width,
            pe_levels_pos=self.pe_levels_pos,
            pe_levels_dir=self.pe_levels_dir,
        )

    def render_settings(self, near: float, far: float, stratified: bool) -> RenderSettings:
        return RenderSettings(
            near=self.near if self.near is not None else near,
            far=self.far if self.far is not None else far,
            n_samples=self.n_samples,
            stratified=stratified,
            white_background=self.white_background,
        )

    def traj_lr0(self) -> float:
        return self.lr0_traj if self.lr0_traj is not None else self.lr0

    def full_scale(self) -> "RunConfig":
        """The full-size configuration: 80K iterations, full field and batches,
        one shared learning rate for both parameter groups."""
        return dataclasses.replace(
            self,
            iterations=80000,
            lr0=5e-4,
            lr0_traj=None,
            batch_color=1024,
            batch_event=1024,
            hidden_layers=4,
            hidden_width=128,
            pe_levels_pos=6,
            pe_levels_dir=2,
            n_samples=64,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None, source: str = "<config>") -> "RunConfig":
        return _load_into(cls, data, source)


@dataclass
class SimulateConfig:
    """Tunables for synthetic dataset generation."""

    scene: str = "textured-plane"
    width: int = 64
    height: int = 64
    focal: float = 64.0          # pixels; principal point defaults to center
    frames: int = 200            # rendered samples driving the event model
    contrast: float = 0.2        # event threshold in log luminance
    rot_deg: float = 4.5         # realized rotation across the exposure
    translation: float = 0.09    # realized translation (world units)
    curvature: float = 0.3       # 0 = near-linear motion
    gt_frames: int = 19          # sharp reference frames written for eval
    traj_samples: int = 128      # ground-truth trajectory samples written
    seed: int = 2                # seeds the motion direction (2 sweeps the
                                 # default plane texture broadside)

    def validate(self) -> None:
        _require(self.width >= 1 and self.height >= 1, "image size must be positive")
        _require(self.focal > 0, "focal must be positive")
        _require(self.frames >= 2, "frames must be >= 2")
        _require(self.contrast > 0, "contrast must be positive")
        _require(self.rot_deg >= 0, "rot_deg must be >= 0")
        _require(self.translation >= 0, "translation must be >= 0")
        _require(self.curvature >= 0, "curvature must be >= 0")
        _require(self.gt_frames >= 2, "gt_frames must be >= 2")
        _require(self.traj_samples >= 2, "traj_samples must be >= 2")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None, source: str = "<config>") -> "SimulateConfig":
        return _load_into(cls, data, source)


def read_config(path, cls):
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return cls.from_dict(data, source=str(path))


def write_config(path, cfg) -> None:
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
