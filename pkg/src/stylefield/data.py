"""Dataset ingestion, checkpoint persistence, and run configuration.

On-disk layouts:

  scene/
    images/frame_00000.png ...
    transforms.json          # camera_angle_x, optional near/far, frames[]

  runs/<run_id>/
    config.json              # the merged config actually used
    checkpoints/{adain,nerf,multistyle}.pt
    stylized/<style_id>/frame_00000.png ...
    registry.json            # style_id -> name, image path, statistics
    logs/

Images cross the file boundary as 8-bit RGB PNG/JPEG and live in memory as
float32 arrays in [0, 1] (plain /255, no gamma transform).
"""

from __future__ import annotations

import contextlib
import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .errors import (
    CheckpointCorruptError,
    CheckpointDigestError,
    CheckpointStageError,
    CheckpointVersionError,
    StateError,
    ValidationError,
)
from .rendering import CameraPose

CHECKPOINT_FORMAT_VERSION = 1
STAGES = ("adain", "nerf", "multistyle")


# ---------------------------------------------------------------------------
# image i/o
# ---------------------------------------------------------------------------


def read_image(path) -> np.ndarray:
    """Decode PNG/JPEG to float32 RGB in [0, 1]."""
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float32) / 255.0


def write_image(path, image: np.ndarray) -> None:
    """Encode a float32 [0, 1] RGB array as 8-bit PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    array = np.clip(np.asarray(image), 0.0, 1.0)
    data = (array * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def encode_png(image: np.ndarray) -> bytes:
    import io

    array = np.clip(np.asarray(image), 0.0, 1.0)
    data = (array * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(data, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# ---------------------------------------------------------------------------
# scenes
# ---------------------------------------------------------------------------


@dataclass
class SceneDataset:
    """N posed RGB views of one scene with near/far bounds and split tags."""

    images: np.ndarray  # (N, H, W, 3) float32 in [0, 1]
    poses: list[CameraPose]
    near: float
    far: float
    splits: list[str]  # "train" | "val" per frame
    frame_ids: list[str]

    def __post_init__(self):
        if len(self.poses) != self.images.shape[0]:
            raise ValidationError(
                f"{self.images.shape[0]} images but {len(self.poses)} poses"
            )
        if len({(p.height, p.width) for p in self.poses}) > 1:
            raise ValidationError("all frames must share one resolution")
        if not self.near < self.far:
            raise ValidationError(f"need near < far, got {self.near}, {self.far}")

    def __len__(self) -> int:
        return self.images.shape[0]

    @property
    def height(self) -> int:
        return self.images.shape[1]

    @property
    def width(self) -> int:
        return self.images.shape[2]

    def indices(self, split: str) -> list[int]:
        return [i for i, s in enumerate(self.splits) if s == split]

    @property
    def train_indices(self) -> list[int]:
        return self.indices("train")

    @property
    def val_indices(self) -> list[int]:
        return self.indices("val")

    def mean_camera_radius(self) -> float:
        return float(np.mean([np.linalg.norm(p.translation) for p in self.poses]))


def focal_from_fov(fov_x: float, width: int) -> float:
    return 0.5 * width / np.tan(0.5 * fov_x)


def load_scene(path, default_near: float = 2.0, default_far: float = 6.0) -> SceneDataset:
    """Load a scene directory containing ``images/`` and ``transforms.json``."""
    path = Path(path)
    transforms_path = path / "transforms.json"
    if not transforms_path.exists():
        raise ValidationError(f"scene {path} has no transforms.json")
    with open(transforms_path) as fh:
        meta = json.load(fh)
    if "camera_angle_x" not in meta:
        raise ValidationError("transforms.json is missing camera_angle_x")
    frames = meta.get("frames", [])
    if not frames:
        raise ValidationError("transforms.json lists no frames")
    near = float(meta.get("near", default_near))
    far = float(meta.get("far", default_far))

    images, poses, splits, frame_ids = [], [], [], []
    for frame in frames:
        file_path = frame["file_path"]
        frame_id = Path(file_path).name
        image_path = path / file_path
        if image_path.suffix == "":
            image_path = image_path.with_suffix(".png")
        if not image_path.exists():
            raise ValidationError(f"frame {frame_id}: image {image_path} is missing")
        image = read_image(image_path)
        matrix = np.asarray(frame["transform_matrix"], dtype=np.float64)
        focal = focal_from_fov(float(meta["camera_angle_x"]), image.shape[1])
        try:
            pose = CameraPose.from_matrix(matrix, focal, image.shape[0], image.shape[1])
        except ValidationError as exc:
            raise ValidationError(f"frame {frame_id}: {exc}") from exc
        images.append(image)
        poses.append(pose)
        splits.append(frame.get("split", "train"))
        frame_ids.append(frame_id)

    stack = np.stack(images, axis=0)
    return SceneDataset(stack, poses, near, far, splits, frame_ids)


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------


def weights_digest(state: dict) -> str:
    """sha256 over tensors in key order; bit-exact across save/load."""
    hasher = hashlib.sha256()
    for key in sorted(state):
        value = state[key]
        tensor = value.detach().cpu().contiguous()
        hasher.update(key.encode())
        hasher.update(str(tensor.dtype).encode())
        hasher.update(str(tuple(tensor.shape)).encode())
        hasher.update(tensor.numpy().tobytes())
    return hasher.hexdigest()


def file_digest(path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def make_checkpoint(stage: str, weights: dict, config: dict, digests: dict | None = None) -> dict:
    if stage not in STAGES:
        raise ValidationError(f"unknown stage {stage!r}; expected one of {STAGES}")
    return {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "stage": stage,
        "weights": weights,
        "weights_digest": {name: weights_digest(state) for name, state in weights.items()},
        "config": config,
        "digests": dict(digests or {}),
    }


def save_checkpoint(checkpoint: dict, path) -> Path:
    """Atomic write: serialize to a sibling temp file, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        torch.save(checkpoint, fh)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)
    return path


def load_checkpoint(path, expected_stage: str | None = None) -> dict:
    path = Path(path)
    if not path.exists():
        raise StateError(f"no checkpoint at {path}")
    try:
        checkpoint = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointCorruptError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(checkpoint, dict) or "format_version" not in checkpoint:
        raise CheckpointCorruptError(f"{path} is not a checkpoint archive")
    version = checkpoint["format_version"]
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: format version {version}, this build reads {CHECKPOINT_FORMAT_VERSION}"
        )
    stage = checkpoint.get("stage")
    if expected_stage is not None and stage != expected_stage:
        raise CheckpointStageError(f"{path}: stage {stage!r}, expected {expected_stage!r}")
    recorded = checkpoint.get("weights_digest", {})
    for name, state in checkpoint.get("weights", {}).items():
        actual = weights_digest(state)
        if recorded.get(name) != actual:
            raise CheckpointDigestError(
                f"{path}: weights[{name!r}] digest mismatch (recorded "
                f"{recorded.get(name)}, payload {actual})"
            )
    return checkpoint


# ---------------------------------------------------------------------------
# run configuration
# ---------------------------------------------------------------------------


@dataclass
class AdainConfig:
    steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-4
    style_weight: float = 10.0  # weight on the statistic-alignment loss term
    resize_to: int | None = 512  # shorter side before cropping; None = use as stored
    crop_size: int | None = 256  # random square crop; None = full frame
    max_content: int | None = None  # cap the content corpus; None = all


@dataclass
class NerfConfig:
    depth: int = 8
    width: int = 256
    skip_layer: int = 4
    n_freq_position: int = 10
    n_freq_direction: int = 4
    n_coarse: int = 64
    n_fine: int = 128
    ray_batch: int = 1024
    learning_rate: float = 5e-4
    lr_decay_steps: int = 50000  # steps for one factor-of-lr_decay_factor decay
    lr_decay_factor: float = 0.1
    steps: int = 5000
    white_background: bool = True


@dataclass
class MultiStyleConfig:
    trunk_split: int = 8  # frozen trunk layers reused from stage 2
    style_hidden_dim: int = 256
    style_embed_dim: int = 128
    view_embed_dim: int = 128
    rgb_hidden_dim: int = 128
    density_aware: bool = False
    density_embed_dim: int = 64
    include_content_as_style: bool = True
    steps: int = 10000
    ray_batch: int = 1024
    learning_rate: float = 5e-4
    lr_decay_steps: int = 50000
    lr_decay_factor: float = 0.1


@dataclass
class RunConfig:
    scene: str = ""
    styles: list[str] = field(default_factory=list)
    out_dir: str = ""
    seed: int = 0
    near: float = 2.0
    far: float = 6.0
    adain: AdainConfig = field(default_factory=AdainConfig)
    nerf: NerfConfig = field(default_factory=NerfConfig)
    multistyle: MultiStyleConfig = field(default_factory=MultiStyleConfig)

    def validate(self) -> None:
        checks = [
            (self.near >= 0 and self.near < self.far, "need 0 <= near < far"),
            (self.adain.steps >= 0, "adain.steps must be >= 0"),
            (self.adain.batch_size >= 1, "adain.batch_size must be >= 1"),
            (self.adain.learning_rate > 0, "adain.learning_rate must be > 0"),
            (self.adain.style_weight >= 0, "adain.style_weight must be >= 0"),
            (self.nerf.depth >= 1, "nerf.depth must be >= 1"),
            (self.nerf.width >= 1, "nerf.width must be >= 1"),
            (0 <= self.nerf.skip_layer, "nerf.skip_layer must be >= 0"),
            (self.nerf.skip_layer < self.nerf.depth, "nerf.skip_layer must be < depth"),
            (self.nerf.n_freq_position >= 1, "nerf.n_freq_position must be >= 1"),
            (self.nerf.n_freq_direction >= 1, "nerf.n_freq_direction must be >= 1"),
            (self.nerf.n_coarse >= 1, "nerf.n_coarse must be >= 1"),
            (self.nerf.n_fine >= 0, "nerf.n_fine must be >= 0"),
            (self.nerf.ray_batch >= 1, "nerf.ray_batch must be >= 1"),
            (self.nerf.learning_rate > 0, "nerf.learning_rate must be > 0"),
            (self.nerf.steps >= 0, "nerf.steps must be >= 0"),
            (1 <= self.multistyle.trunk_split <= self.nerf.depth,
             "multistyle.trunk_split must be in [1, nerf.depth]"),
            (self.multistyle.steps >= 0, "multistyle.steps must be >= 0"),
            (self.multistyle.ray_batch >= 1, "multistyle.ray_batch must be >= 1"),
            (self.multistyle.learning_rate > 0, "multistyle.learning_rate must be > 0"),
            (self.multistyle.style_embed_dim >= 1, "style_embed_dim must be >= 1"),
            (self.multistyle.view_embed_dim >= 1, "view_embed_dim must be >= 1"),
            (self.multistyle.density_embed_dim >= 1, "density_embed_dim must be >= 1"),
        ]
        for ok, message in checks:
            if not ok:
                raise ValidationError(message)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        for key, sub in (("adain", AdainConfig), ("nerf", NerfConfig), ("multistyle", MultiStyleConfig)):
            if key in data and isinstance(data[key], dict):
                known = {f.name for f in dataclasses.fields(sub)}
                unknown = set(data[key]) - known
                if unknown:
                    raise ValidationError(f"unknown {key} config keys: {sorted(unknown)}")
                data[key] = sub(**data[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    def apply_override(self, dotted_key: str, raw_value: str) -> None:
        """Set e.g. ``nerf.steps=500`` from a CLI flag, coercing to the
        field's annotated type."""
        target = self
        parts = dotted_key.split(".")
        for part in parts[:-1]:
            if not hasattr(target, part):
                raise ValidationError(f"unknown config section {part!r} in {dotted_key!r}")
            target = getattr(target, part)
        name = parts[-1]
        fields = {f.name: f for f in dataclasses.fields(target)}
        if name not in fields:
            raise ValidationError(f"unknown config key {dotted_key!r}")
        allows_none = "None" in str(fields[name].type)
        if allows_none and raw_value.lower() in ("none", "null", ""):
            setattr(target, name, None)
            return
        current = getattr(target, name)
        if current is None:
            current = 0  # optional fields are numeric knobs; parse as int
        setattr(target, name, _coerce(raw_value, current, dotted_key))

    def fingerprint(self) -> str:
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


def _coerce(raw: str, current, key: str):
    if isinstance(current, bool):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(current, int) and not isinstance(current, bool):
        try:
            return int(raw)
        except ValueError as exc:
            raise ValidationError(f"{key}: expected an integer, got {raw!r}") from exc
    if isinstance(current, float):
        try:
            return float(raw)
        except ValueError as exc:
            raise ValidationError(f"{key}: expected a number, got {raw!r}") from exc
    if isinstance(current, list):
        return [item for item in raw.split(",") if item]
    return raw


# ---------------------------------------------------------------------------
# run directories
# ---------------------------------------------------------------------------


@dataclass
class RunPaths:
    root: Path

    @property
    def config(self) -> Path:
        return self.root / "config.json"

    @property
    def checkpoints(self) -> Path:
        return self.root / "checkpoints"

    def checkpoint(self, stage: str) -> Path:
        return self.checkpoints / f"{stage}.pt"

    @property
    def stylized(self) -> Path:
        return self.root / "stylized"

    @property
    def registry(self) -> Path:
        return self.root / "registry.json"

    @property
    def logs(self) -> Path:
        return self.root / "logs"

    @property
    def lock(self) -> Path:
        return self.root / ".lock"


def run_paths(run_dir) -> RunPaths:
    return RunPaths(Path(run_dir))


@contextlib.contextmanager
def run_lock(run_dir):
    """Exclusive writer lock for one run directory (O_EXCL lock file)."""
    paths = run_paths(run_dir)
    paths.root.mkdir(parents=True, exist_ok=True)
    try:
        fd = os.open(paths.lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise StateError(f"run directory {paths.root} is locked by another writer") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield paths
    finally:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(paths.lock)
