"""Dataset and checkpoint persistence.

Formats (all little-endian; full byte layouts in docs/formats.md):

* events, binary: 16-byte header (magic ``EVT1``, u32 width, u32 height,
  u32 count) then ``count`` 16-byte records (f64 t, u16 x, u16 y, i8 p,
  3 pad bytes).
* events, text: whitespace-delimited ``t x y p`` lines, ``#`` comments.
* images: 8-bit PNG for viewing plus a float32 ``.npy`` sidecar holding the
  exact linear values; loaders prefer the sidecar.
* trajectory: text rows ``t tx ty tz qx qy qz qw`` (unit quaternion, x y z w
  order).
* manifest: JSON with a ``schema_version`` field tying the rest together.
* checkpoint: magic ``EDCK``, u32 version, u64 header length, JSON header
  (architecture, trajectory layout, optimizer hyperparameters, RNG state,
  array table), raw array payload, trailing u32 CRC32 of all prior bytes.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .events import EventStream
from .field import CameraIntrinsics, FieldArch, SceneField
from .lie import RigidTransform, quat_to_rotation, rotation_to_quat
from .optim import AdamState


class ParseError(ValueError):
    """Malformed or truncated file content."""


class VersionMismatch(ValueError):
    """Persisted data is from an incompatible schema or architecture."""


EVENT_MAGIC = b"EVT1"
EVENT_RECORD = np.dtype([("t", "<f8"), ("x", "<u2"), ("y", "<u2"), ("p", "i1"), ("pad", "V3")])
CHECKPOINT_MAGIC = b"EDCK"
CHECKPOINT_VERSION = 1
MANIFEST_SCHEMA_VERSION = 1


# ---------------------------------------------------------------------------
# events


def write_events_binary(path, stream: EventStream) -> None:
    stream.validate()
    if stream.width > 0xFFFF or stream.height > 0xFFFF:
        raise ValueError("sensor dimensions exceed the 16-bit record format")
    rec = np.zeros(len(stream), dtype=EVENT_RECORD)
    rec["t"] = stream.t
    rec["x"] = stream.x
    rec["y"] = stream.y
    rec["p"] = stream.p
    with open(path, "wb") as f:
        f.write(EVENT_MAGIC)
        f.write(struct.pack("<III", stream.width, stream.height, len(stream)))
        f.write(rec.tobytes())


def write_events_text(path, stream: EventStream) -> None:
    stream.validate()
    with open(path, "w") as f:
        f.write(f"# events {stream.width}x{stream.height}\n# t x y p\n")
        for t, x, y, p in zip(stream.t, stream.x, stream.y, stream.p):
            f.write(f"{float(t):.17g} {int(x)} {int(y)} {int(p)}\n")


def read_events(path, contrast: float = 1.0, width: int = 0, height: int = 0) -> EventStream:
    """Read an event file, binary or text (sniffed by magic).

    Text files carry no sensor size, so ``width``/``height`` must be given
    for them (or be recoverable from a header comment written by
    :func:`write_events_text`).
    """
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] == EVENT_MAGIC:
        if len(raw) < 16:
            raise ParseError(f"{path}: truncated event header")
        w, h, n = struct.unpack("<III", raw[4:16])
        expected = 16 + n * EVENT_RECORD.itemsize
        if len(raw) != expected:
            raise ParseError(f"{path}: expected {expected} bytes for {n} events, got {len(raw)}")
        rec = np.frombuffer(raw, dtype=EVENT_RECORD, count=n, offset=16)
        stream = EventStream(
            t=rec["t"].astype(np.float64),
            x=rec["x"].astype(np.int64),
            y=rec["y"].astype(np.int64),
            p=rec["p"].astype(np.int8),
            width=w,
            height=h,
            contrast=contrast,
        )
    else:
        ts, xs, ys, ps = [], [], [], []
        for line_no, line in enumerate(raw.decode("utf-8").splitlines(), 1):
            if line.startswith("# events ") and "x" in line:
                dims = line.split()[2]
                w_str, h_str = dims.split("x")
                width, height = int(w_str), int(h_str)
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{line_no}: expected 4 fields, got {len(parts)}")
            try:
                ts.append(float(parts[0]))
                xs.append(int(parts[1]))
                ys.append(int(parts[2]))
                ps.append(int(parts[3]))
            except ValueError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}") from None
        if not (width > 0 and height > 0):
            raise ParseError(f"{path}: sensor size unknown; pass width/height")
        stream = EventStream(
            t=np.asarray(ts, dtype=np.float64),
            x=np.asarray(xs, dtype=np.int64),
            y=np.asarray(ys, dtype=np.int64),
            p=np.asarray(ps, dtype=np.int8),
            width=width,
            height=height,
            contrast=contrast,
        )
    stream.validate()
    return stream


# ---------------------------------------------------------------------------
# images


def write_image(path, img: np.ndarray, sidecar: bool = True):
    """Write an 8-bit PNG; optionally an exact float32 .npy sidecar.

    Returns (png_path, sidecar_path or None).
    """
    path = Path(path)
    img = np.asarray(img, dtype=np.float64)
    q = np.clip(np.round(img * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(q, mode="RGB" if img.ndim == 3 else "L").save(path)
    side = None
    if sidecar:
        side = path.with_suffix(path.suffix + ".npy")
        np.save(side, img.astype(np.float32))
    return path, side


def read_image(path) -> np.ndarray:
    """Read a linear float image, preferring the float32 sidecar when present."""
    path = Path(path)
    side = path.with_suffix(path.suffix + ".npy")
    if side.exists():
        return np.load(side).astype(np.float64)
    arr = np.asarray(Image.open(path), dtype=np.float64) / 255.0
    return arr


# ---------------------------------------------------------------------------
# trajectories


def write_trajectory(path, times, poses) -> None:
    with open(path, "w") as f:
        f.write("# t tx ty tz qx qy qz qw\n")
        for t, pose in zip(times, poses):
            q = rotation_to_quat(pose.rotation)
            tr = pose.translation
            vals = [t, tr[0], tr[1], tr[2], q[0], q[1], q[2], q[3]]
            f.write(" ".join(f"{float(v):.17g}" for v in vals) + "\n")


def read_trajectory(path):
    times, poses = [], []
    with open(path) as f:
        for line_no, line in enumerate(f, 1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            parts = stripped.split()
            if len(parts) != 8:
                raise ParseError(f"{path}:{line_no}: expected 8 fields, got {len(parts)}")
            vals = [float(v) for v in parts]
            times.append(vals[0])
            poses.append(
                RigidTransform(
                    rotation=quat_to_rotation(np.asarray(vals[4:8])),
                    translation=np.asarray(vals[1:4]),
                )
            )
    return np.asarray(times), poses


# ---------------------------------------------------------------------------
# manifest


@dataclass
class DatasetManifest:
    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    near: float
    far: float
    contrast: float
    event_file: str
    blur_image: str
    exposure: float = 1.0
    schema_version: int = MANIFEST_SCHEMA_VERSION
    gt_trajectory: str | None = None
    gt_sharp_frames: list = dataclasses.field(default_factory=list)
    gt_frame_times: list = dataclasses.field(default_factory=list)
    scene_kind: str | None = None
    scene_depth: float | None = None
    frames: int | None = None
    seeds: dict = dataclasses.field(default_factory=dict)

    REQUIRED = (
        "width", "height", "fx", "fy", "cx", "cy",
        "near", "far", "contrast", "event_file", "blur_image",
    )

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(
            fx=self.fx, fy=self.fy, cx=self.cx, cy=self.cy,
            width=self.width, height=self.height,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, source: str = "<manifest>") -> "DatasetManifest":
        if not isinstance(data, dict):
            raise ParseError(f"{source}: manifest must be a JSON object")
        for key in cls.REQUIRED:
            if key not in data:
                raise ParseError(f"{source}: missing required field {key!r}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParseError(f"{source}: unknown fields {sorted(unknown)}")
        manifest = cls(**data)
        if manifest.schema_version != MANIFEST_SCHEMA_VERSION:
            raise VersionMismatch(
                f"{source}: manifest schema {manifest.schema_version} != {MANIFEST_SCHEMA_VERSION}"
            )
        if manifest.width <= 0 or manifest.height <= 0:
            raise ParseError(f"{source}: non-positive sensor dimensions")
        if not (0 < manifest.near < manifest.far):
            raise ParseError(f"{source}: need 0 < near < far")
        if not manifest.contrast > 0:
            raise ParseError(f"{source}: contrast must be positive")
        return manifest


def write_manifest(path, manifest: DatasetManifest) -> None:
    with open(path, "w") as f:
        json.dump(manifest.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    return DatasetManifest.from_dict(data, source=str(path))


def load_dataset(path):
    """Load (blurry image, event stream, manifest) from a dataset directory
    or an explicit manifest path. Events are re-validated on load."""
    path = Path(path)
    manifest_path = path / "manifest.json" if path.is_dir() else path
    manifest = read_manifest(manifest_path)
    root = manifest_path.parent
    blur = read_image(root / manifest.blur_image)
    if blur.ndim != 3 or blur.shape != (manifest.height, manifest.width, 3):
        raise ParseError(
            f"{manifest.blur_image}: expected shape "
            f"({manifest.height}, {manifest.width}, 3), got {blur.shape}"
        )
    stream = read_events(
        root / manifest.event_file,
        contrast=manifest.contrast,
        width=manifest.width,
        height=manifest.height,
    )
    if stream.width != manifest.width or stream.height != manifest.height:
        raise ParseError("event file sensor size disagrees with manifest")
    if len(stream) and stream.t[-1] > manifest.exposure + 1e-12:
        raise ParseError("event timestamps extend past the exposure")
    return blur, stream, manifest


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    arch: FieldArch
    field_params: np.ndarray
    knot_twists: np.ndarray
    trajectory_mode: str
    t0: float
    dt: float
    adam_scene: AdamState
    adam_traj: AdamState
    step: int
    rng_state: dict
    config: dict

    def scene_field(self) -> SceneField:
        return SceneField(arch=self.arch, params=self.field_params)


def _adam_header(state: AdamState) -> dict:
    return {
        "lr0": state.lr0,
        "total_steps": state.total_steps,
        "decay_target_frac": state.decay_target_frac,
        "beta1": state.beta1,
        "beta2": state.beta2,
        "eps": state.eps,
        "step": state.step,
    }


def _adam_from_header(h: dict, m, v) -> AdamState:
    state = AdamState(
        lr0=h["lr0"],
        total_steps=h["total_steps"],
        decay_target_frac=h["decay_target_frac"],
        beta1=h["beta1"],
        beta2=h["beta2"],
        eps=h["eps"],
        step=h["step"],
    )
    state.m = m
    state.v = v
    return state


def save_checkpoint(
    path,
    *,
    arch: FieldArch,
    field_params: np.ndarray,
    knot_twists: np.ndarray,
    trajectory_mode: str,
    adam_scene: AdamState,
    adam_traj: AdamState,
    step: int,
    rng_state: dict,
    t0: float = 0.0,
    dt: float = 1.0,
    config: dict | None = None,
) -> None:
    arrays = {
        "field_params": np.asarray(field_params),
        "knot_twists": np.asarray(knot_twists),
    }
    for name, state in (("scene", adam_scene), ("traj", adam_traj)):
        if state.m is not None:
            arrays[f"adam_{name}_m"] = state.m
            arrays[f"adam_{name}_v"] = state.v

    table = []
    payload = bytearray()
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        dt_le = arr.dtype.newbyteorder("<")
        table.append(
            {
                "name": name,
                "dtype": dt_le.str,
                "shape": list(arr.shape),
                "offset": len(payload),
            }
        )
        payload.extend(arr.astype(dt_le, copy=False).tobytes())

    header = {
        "schema": CHECKPOINT_VERSION,
        "arch": {
            "hidden_layers": arch.hidden_layers,
            "hidden_width": arch.hidden_width,
            "pe_levels_pos": arch.pe_levels_pos,
            "pe_levels_dir": arch.pe_levels_dir,
        },
        "trajectory": {"mode": trajectory_mode, "t0": t0, "dt": dt},
        "step": step,
        "rng_state": rng_state,
        "adam_scene": _adam_header(adam_scene),
        "adam_traj": _adam_header(adam_traj),
        "arrays": table,
        "config": config or {},
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    body = (
        CHECKPOINT_MAGIC
        + struct.pack("<IQ", CHECKPOINT_VERSION, len(header_bytes))
        + header_bytes
        + bytes(payload)
    )
    with open(path, "wb") as f:
        f.write(body)
        f.write(struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF))


def load_checkpoint(path, expect_arch: FieldArch | None = None) -> Checkpoint:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < 20 or raw[:4] != CHECKPOINT_MAGIC:
        raise ParseError(f"{path}: not a checkpoint file")
    body, crc_bytes = raw[:-4], raw[-4:]
    (crc_stored,) = struct.unpack("<I", crc_bytes)
    if zlib.crc32(body) & 0xFFFFFFFF != crc_stored:
        raise ParseError(f"{path}: checksum mismatch (truncated or corrupt)")
    version, header_len = struct.unpack("<IQ", raw[4:16])
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version} != {CHECKPOINT_VERSION}")
    header_end = 16 + header_len
    if header_end > len(body):
        raise ParseError(f"{path}: header extends past file end")
    try:
        header = json.loads(body[16:header_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: bad checkpoint header ({exc})") from None
    payload = body[header_end:]

    arch = FieldArch(**header["arch"])
    if expect_arch is not None and arch != expect_arch:
        raise VersionMismatch(
            f"{path}: checkpoint architecture {header['arch']} does not match the requested one"
        )

    arrays = {}
    for entry in header["arrays"]:
        dt = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = entry["offset"]
        end = start + count * dt.itemsize
        if end > len(payload):
            raise ParseError(f"{path}: array {entry['name']!r} extends past payload")
        arrays[entry["name"]] = (
            np.frombuffer(payload, dtype=dt, count=count, offset=start)
            .reshape(entry["shape"])
            .copy()
        )

    for required in ("field_params", "knot_twists"):
        if required not in arrays:
            raise ParseError(f"{path}: missing array {required!r}")

    adam_scene = _adam_from_header(
        header["adam_scene"], arrays.get("adam_scene_m"), arrays.get("adam_scene_v")
    )
    adam_traj = _adam_from_header(
        header["adam_traj"], arrays.get("adam_traj_m"), arrays.get("adam_traj_v")
    )
    traj_meta = header["trajectory"]
    return Checkpoint(
        arch=arch,
        field_params=arrays["field_params"],
        knot_twists=arrays["knot_twists"],
        trajectory_mode=traj_meta["mode"],
        t0=traj_meta["t0"],
        dt=traj_meta["dt"],
        adam_scene=adam_scene,
        adam_traj=adam_traj,
        step=header["step"],
        rng_state=header["rng_state"],
        config=header.get("config", {}),
    )
