"""Style-conditioned radiance field over a frozen trunk.

Stage 3 reuses the position trunk trained in stage 2 (weights immutable,
digest recorded) and learns four small heads per pass:

  * a style head mapping flattened feature statistics (1920) to an
    embedding,
  * a view head over trunk feature + encoded direction,
  * an rgb head over the concatenated style and view embeddings,
  * a density head over the trunk feature, optionally joined with a
    second style embedding when the density-aware variant is enabled.

Training is purely photometric against the N x M stylized image grid; no
style loss term exists anywhere in this stage. Conditioning vectors are
plain statistics, so blending two styles or dialing stylization intensity
is elementwise interpolation of vectors, no retraining involved.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .adain import FLATTENED_DIM, STAT_CHANNELS, AdainStylizer, StyleStatistics
from .data import (
    MultiStyleConfig,
    NerfConfig,
    SceneDataset,
    load_checkpoint,
    make_checkpoint,
    read_image,
    save_checkpoint,
    weights_digest,
    write_image,
)
from .errors import CheckpointDigestError, StateError, ValidationError
from .nerf import (
    RadianceField,
    TrainedNerf,
    Trunk,
    check_unit_directions,
    flatten_rays,
    render_image,
    render_rays,
)
from .rendering import CameraPose, encoding_dim, positional_encode

Tensor = torch.Tensor

CONTENT_STYLE_ID = "content"
REGISTRY_VERSION = 1


# ---------------------------------------------------------------------------
# statistic interpolation
# ---------------------------------------------------------------------------


def interpolate_styles(a: StyleStatistics, b: StyleStatistics, lam: float) -> StyleStatistics:
    """Elementwise convex blend (1 - lam) * a + lam * b over means and stds.

    Both inputs must share channel layout; lam is confined to [0, 1], so
    the result's stds stay nonnegative. Computed as a + lam * (b - a) with
    exact endpoints, which makes blending a style with itself the identity
    at every lam.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValidationError(f"lam must lie in [0, 1], got {lam}")
    if a.channels != b.channels:
        raise ValidationError(
            f"statistics layouts differ: {a.channels} vs {b.channels}"
        )
    if lam == 0.0:
        return StyleStatistics(a.means, a.stds)
    if lam == 1.0:
        return StyleStatistics(b.means, b.stds)
    means = tuple(ma + lam * (mb - ma) for ma, mb in zip(a.means, b.means))
    stds = tuple(
        torch.clamp(sa + lam * (sb - sa), min=0.0) for sa, sb in zip(a.stds, b.stds)
    )
    return StyleStatistics(means, stds)


def set_intensity(
    style_stats: StyleStatistics, content_stats: StyleStatistics, intensity: float
) -> StyleStatistics:
    """Blend from the scene's own statistics (0) to the full style (1)."""
    return interpolate_styles(content_stats, style_stats, intensity)


# ---------------------------------------------------------------------------
# style registry
# ---------------------------------------------------------------------------


@dataclass
class StyleEntry:
    style_id: str
    name: str
    image_path: str  # relative to the registry's directory
    stats: StyleStatistics


class StyleRegistry:
    """Ordered style_id -> entry map persisted as one JSON document."""

    def __init__(self, entries: list[StyleEntry]):
        self.entries = list(entries)
        ids = [e.style_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate style ids in registry: {ids}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def style_ids(self) -> list[str]:
        return [e.style_id for e in self.entries]

    def __contains__(self, style_id: str) -> bool:
        return any(e.style_id == style_id for e in self.entries)

    def get(self, style_id: str) -> StyleEntry:
        for entry in self.entries:
            if entry.style_id == style_id:
                return entry
        raise ValidationError(f"unknown style id {style_id!r}; have {self.style_ids}")

    def to_dict(self) -> dict:
        return {
            "version": REGISTRY_VERSION,
            "styles": [
                {
                    "style_id": e.style_id,
                    "name": e.name,
                    "image_path": e.image_path,
                    "channels": list(e.stats.channels),
                    "statistics": [float(x) for x in e.stats.flatten()],
                }
                for e in self.entries
            ],
        }

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "StyleRegistry":
        with open(path) as fh:
            data = json.load(fh)
        if data.get("version") != REGISTRY_VERSION:
            raise ValidationError(f"registry version {data.get('version')} unsupported")
        entries = []
        for item in data["styles"]:
            vector = torch.tensor(item["statistics"], dtype=torch.float32)
            stats = StyleStatistics.from_flat(vector, tuple(item["channels"]))
            entries.append(
                StyleEntry(item["style_id"], item["name"], item["image_path"], stats)
            )
        return cls(entries)

    def digest(self) -> str:
        import hashlib

        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canonical.encode()).hexdigest()


# ---------------------------------------------------------------------------
# stylized dataset (stage-3 corpus)
# ---------------------------------------------------------------------------


@dataclass
class StylizedDataset:
    """The N x M image grid sharing the scene's poses, plus the registry."""

    scene: SceneDataset
    registry: StyleRegistry
    images: np.ndarray  # (N, M', H, W, 3), style axis in registry order

    def __post_init__(self):
        n, m = self.images.shape[:2]
        if n != len(self.scene):
            raise ValidationError("stylized grid frame count must match the scene")
        if m != len(self.registry):
            raise ValidationError("stylized grid style count must match the registry")

    def style_index(self, style_id: str) -> int:
        return self.registry.style_ids.index(style_id)


def _quantize(image: np.ndarray) -> np.ndarray:
    """Round-trip through 8-bit so the in-memory grid equals the PNGs."""
    return ((np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8) / 255.0).astype(np.float32)


def build_stylized_dataset(
    scene: SceneDataset,
    style_paths: list,
    stylizer: AdainStylizer,
    run_dir,
    include_content_as_style: bool = True,
) -> StylizedDataset:
    """Stylize every frame with every style and persist the grid.

    Writes ``stylized/<style_id>/<frame_id>.png`` plus ``registry.json``
    and a ``styles/`` folder of the source style images (for thumbnails).
    When ``include_content_as_style`` is set, a final registry entry
    carries the per-frame statistics of the original images averaged over
    frames, and its grid column is the original frames themselves.
    """
    if not style_paths:
        raise ValidationError("need at least one style image")
    run_dir = Path(run_dir)
    stylized_root = run_dir / "stylized"
    styles_root = run_dir / "styles"
    styles_root.mkdir(parents=True, exist_ok=True)

    entries: list[StyleEntry] = []
    columns: list[np.ndarray] = []
    for index, style_path in enumerate(style_paths):
        style_path = Path(style_path)
        if not style_path.exists():
            raise StateError(f"style image {style_path} does not exist")
        style_id = f"style_{index:02d}"
        style_image = read_image(style_path)
        copied = styles_root / f"{style_id}.png"
        write_image(copied, style_image)

        frames = []
        for n, frame_id in enumerate(scene.frame_ids):
            stylized = stylizer.stylize(scene.images[n], style_image, alpha=1.0)
            write_image(stylized_root / style_id / f"{frame_id}.png", stylized)
            frames.append(_quantize(stylized))
        columns.append(np.stack(frames))
        entries.append(
            StyleEntry(
                style_id=style_id,
                name=style_path.stem,
                image_path=str(copied.relative_to(run_dir)),
                stats=stylizer.style_statistics(style_image),
            )
        )

    if include_content_as_style:
        frames = []
        stats_sum: Tensor | None = None
        for n, frame_id in enumerate(scene.frame_ids):
            original = scene.images[n]
            write_image(stylized_root / CONTENT_STYLE_ID / f"{frame_id}.png", original)
            frames.append(original.astype(np.float32))
            flat = stylizer.style_statistics(original).flatten()
            stats_sum = flat if stats_sum is None else stats_sum + flat
        mean_stats = StyleStatistics.from_flat(stats_sum / len(scene), STAT_CHANNELS)
        thumb = styles_root / f"{CONTENT_STYLE_ID}.png"
        write_image(thumb, scene.images[0])
        columns.append(np.stack(frames))
        entries.append(
            StyleEntry(
                style_id=CONTENT_STYLE_ID,
                name="original scene",
                image_path=str(thumb.relative_to(run_dir)),
                stats=mean_stats,
            )
        )

    registry = StyleRegistry(entries)
    registry.save(run_dir / "registry.json")
    grid = np.stack(columns, axis=1)  # (N, M', H, W, 3)
    return StylizedDataset(scene, registry, grid)


def load_stylized_dataset(run_dir, scene: SceneDataset) -> StylizedDataset:
    run_dir = Path(run_dir)
    registry_path = run_dir / "registry.json"
    if not registry_path.exists():
        raise StateError(f"{run_dir} has no registry.json; build the stylized dataset first")
    registry = StyleRegistry.load(registry_path)
    columns = []
    for entry in registry.entries:
        frames = []
        for frame_id in scene.frame_ids:
            frame_path = run_dir / "stylized" / entry.style_id / f"{frame_id}.png"
            if not frame_path.exists():
                raise StateError(f"stylized frame missing: {frame_path}")
            frames.append(read_image(frame_path))
        columns.append(np.stack(frames))
    return StylizedDataset(scene, registry, np.stack(columns, axis=1))


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------


class MultiStyleHeads(nn.Module):
    """One trainable head set (density, style, view, rgb) for one pass."""

    def __init__(self, trunk_dim: int, dir_dim: int, config: MultiStyleConfig,
                 stats_dim: int = FLATTENED_DIM):
        super().__init__()
        self.density_aware = config.density_aware
        self.style_mlp = nn.Sequential(
            nn.Linear(stats_dim, config.style_hidden_dim),
            nn.ReLU(),
            nn.Linear(config.style_hidden_dim, config.style_embed_dim),
        )
        self.view_mlp = nn.Linear(trunk_dim + dir_dim, config.view_embed_dim)
        self.rgb_mlp = nn.Sequential(
            nn.Linear(config.style_embed_dim + config.view_embed_dim, config.rgb_hidden_dim),
            nn.ReLU(),
            nn.Linear(config.rgb_hidden_dim, 3),
        )
        if config.density_aware:
            self.density_style_mlp = nn.Sequential(
                nn.Linear(stats_dim, config.style_hidden_dim),
                nn.ReLU(),
                nn.Linear(config.style_hidden_dim, config.density_embed_dim),
            )
            self.alpha_mlp = nn.Linear(trunk_dim + config.density_embed_dim, 1)
        else:
            self.alpha_mlp = nn.Linear(trunk_dim, 1)

    def forward(self, trunk_feat: Tensor, d_enc: Tensor, stats_vec: Tensor):
        """stats_vec is one flattened statistics vector shared by all points."""
        style_embed = self.style_mlp(stats_vec)
        if self.density_aware:
            density_embed = self.density_style_mlp(stats_vec)
            alpha_in = torch.cat(
                [trunk_feat, density_embed.expand(trunk_feat.shape[:-1] + density_embed.shape)],
                dim=-1,
            )
        else:
            alpha_in = trunk_feat
        sigma = F.relu(self.alpha_mlp(alpha_in)).squeeze(-1)
        view_embed = F.relu(self.view_mlp(torch.cat([trunk_feat, d_enc], dim=-1)))
        rgb_in = torch.cat(
            [style_embed.expand(view_embed.shape[:-1] + style_embed.shape), view_embed], dim=-1
        )
        rgb = torch.sigmoid(self.rgb_mlp(rgb_in))
        return sigma, rgb


class MultiStyleModel(nn.Module):
    """Frozen trunk shared by trainable coarse and fine head sets."""

    def __init__(
        self,
        trunk: Trunk,
        config: MultiStyleConfig,
        nerf_config: NerfConfig,
        near: float,
        far: float,
    ):
        super().__init__()
        if config.trunk_split > trunk.depth:
            raise ValidationError(
                f"trunk_split {config.trunk_split} exceeds trunk depth {trunk.depth}"
            )
        self.trunk = trunk
        self.trunk.requires_grad_(False)
        self.trunk.eval()
        self.config = config
        self.nerf_config = nerf_config
        self.near = near
        self.far = far
        self.trained = False
        dir_dim = encoding_dim(3, nerf_config.n_freq_direction)
        self.coarse_heads = MultiStyleHeads(trunk.width, dir_dim, config)
        self.fine_heads = MultiStyleHeads(trunk.width, dir_dim, config)
        self.trunk_digest = weights_digest(self.trunk.state_dict())

    def trunk_features(self, positions: Tensor) -> Tensor:
        x_enc = positional_encode(positions, self.nerf_config.n_freq_position)
        with torch.no_grad():
            return self.trunk(x_enc, n_layers=self.config.trunk_split)

    def field(self, stats: StyleStatistics, which: str = "fine") -> RadianceField:
        """Bind a style, yielding a (positions, directions) -> (sigma, rgb)
        callable compatible with the stage-2 render path."""
        if stats.flattened_dim != FLATTENED_DIM:
            raise ValidationError(
                f"statistics dim {stats.flattened_dim}, model expects {FLATTENED_DIM}"
            )
        heads = {"coarse": self.coarse_heads, "fine": self.fine_heads}[which]
        stats_vec = stats.flatten()

        def radiance(positions: Tensor, directions: Tensor):
            trunk_feat = self.trunk_features(positions)
            d_enc = positional_encode(directions, self.nerf_config.n_freq_direction)
            return heads(trunk_feat, d_enc, stats_vec)

        return radiance

    def head_parameters(self):
        yield from self.coarse_heads.parameters()
        yield from self.fine_heads.parameters()

    def checkpoint(self, registry_digest: str, run_config: dict | None = None) -> dict:
        return make_checkpoint(
            stage="multistyle",
            weights={
                "trunk": self.trunk.state_dict(),
                "coarse_heads": self.coarse_heads.state_dict(),
                "fine_heads": self.fine_heads.state_dict(),
            },
            config={
                "multistyle": self.config.__dict__,
                "nerf": self.nerf_config.__dict__,
                "near": self.near,
                "far": self.far,
                "run": run_config or {},
            },
            digests={"trunk": self.trunk_digest, "registry": registry_digest},
        )

    def save(self, path, registry_digest: str, run_config: dict | None = None) -> None:
        save_checkpoint(self.checkpoint(registry_digest, run_config), path)


def multistyle_forward(
    positions: Tensor,
    directions: Tensor,
    style_stats: StyleStatistics,
    model: MultiStyleModel,
    which: str = "fine",
):
    """Query the style-conditioned field at raw positions/unit directions."""
    if positions.shape != directions.shape:
        raise ValidationError("positions and directions must share shape")
    check_unit_directions(directions)
    return model.field(style_stats, which)(positions, directions)


def load_multistyle_model(path, expected_registry_digest: str | None = None) -> MultiStyleModel:
    checkpoint = load_checkpoint(path, expected_stage="multistyle")
    nerf_config = NerfConfig(**checkpoint["config"]["nerf"])
    config = MultiStyleConfig(**checkpoint["config"]["multistyle"])
    pos_dim = encoding_dim(3, nerf_config.n_freq_position)
    trunk = Trunk(pos_dim, nerf_config.depth, nerf_config.width, nerf_config.skip_layer)
    trunk.load_state_dict(checkpoint["weights"]["trunk"])
    model = MultiStyleModel(
        trunk, config, nerf_config, checkpoint["config"]["near"], checkpoint["config"]["far"]
    )
    model.coarse_heads.load_state_dict(checkpoint["weights"]["coarse_heads"])
    model.fine_heads.load_state_dict(checkpoint["weights"]["fine_heads"])
    recorded = checkpoint["digests"].get("trunk")
    if recorded != model.trunk_digest:
        raise CheckpointDigestError(
            f"trunk digest mismatch: recorded {recorded}, payload {model.trunk_digest}"
        )
    if expected_registry_digest is not None:
        stored = checkpoint["digests"].get("registry")
        if stored != expected_registry_digest:
            raise CheckpointDigestError(
                f"registry digest mismatch: checkpoint {stored}, current {expected_registry_digest}"
            )
    model.trained = True
    model.eval()
    return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------


def train_multistyle(
    dataset: StylizedDataset,
    nerf_model: TrainedNerf,
    config: MultiStyleConfig,
    seed: int = 0,
    expected_trunk_digest: str | None = None,
    progress=None,
    log_every: int = 25,
) -> MultiStyleModel:
    """Photometric training of the head MLPs over the N x M grid.

    Each batch draws rays uniformly over (frame, style) pairs: every ray's
    target pixel comes from the stylized image of its pair and the matching
    statistics condition the network, so all styles receive gradient signal
    every step. Only head parameters update; the trunk is shared, frozen,
    and digest-checked.
    """
    if len(dataset.registry) == 0:
        raise ValidationError("stylized dataset has no styles")
    scene = dataset.scene
    train_idx = scene.train_indices
    if not train_idx:
        raise ValidationError("scene has no training frames")

    trunk = copy.deepcopy(nerf_model.fine.trunk)
    if expected_trunk_digest is not None:
        actual = weights_digest(trunk.state_dict())
        if actual != expected_trunk_digest:
            raise StateError(
                f"stage-2 trunk digest {actual} does not match expected {expected_trunk_digest}"
            )

    torch.manual_seed(seed)
    model = MultiStyleModel(
        trunk, config, nerf_model.config, nerf_model.near, nerf_model.far
    )
    model.coarse_heads.train()
    model.fine_heads.train()
    optimizer = torch.optim.Adam(model.head_parameters(), lr=config.learning_rate)

    all_rays, _ = flatten_rays(scene, train_idx)
    n_rays_total = len(all_rays)
    style_ids = dataset.registry.style_ids
    stats_per_style = [entry.stats for entry in dataset.registry.entries]
    # (M', N_train * H * W, 3) flattened targets aligned with all_rays.
    targets = torch.from_numpy(
        np.stack(
            [dataset.images[train_idx, m].reshape(-1, 3) for m in range(len(style_ids))]
        )
    )

    digest_before = model.trunk_digest
    for step in range(config.steps):
        rng = torch.Generator().manual_seed(seed * 1_000_003 + step)
        pick = torch.randint(0, n_rays_total, (config.ray_batch,), generator=rng)
        style_pick = torch.randint(0, len(style_ids), (config.ray_batch,), generator=rng)

        optimizer.zero_grad()
        total = 0.0
        per_style = {}
        for m in range(len(style_ids)):
            mask = style_pick == m
            if not bool(mask.any()):
                continue
            subset = pick[mask]
            rays = all_rays.select(subset)
            target = targets[m][subset]
            out = render_rays(
                rays,
                model.field(stats_per_style[m], "coarse"),
                model.field(stats_per_style[m], "fine"),
                model.nerf_config,
                rng=rng,
                perturb=True,
            )
            loss_m = F.mse_loss(out.color_coarse, target) + F.mse_loss(out.color_fine, target)
            weight = float(mask.sum()) / config.ray_batch
            (loss_m * weight).backward()
            total += float(loss_m.detach()) * weight
            per_style[style_ids[m]] = float(loss_m.detach())
        optimizer.step()

        decay = config.lr_decay_factor ** (1.0 / config.lr_decay_steps)
        for group in optimizer.param_groups:
            group["lr"] = config.learning_rate * decay ** (step + 1)

        if progress is not None and (step % log_every == 0 or step == config.steps - 1):
            record = {"stage": "multistyle", "step": step, "loss": total}
            record.update({f"loss_{sid}": value for sid, value in per_style.items()})
            progress(record)

    if weights_digest(model.trunk.state_dict()) != digest_before:
        raise StateError("frozen trunk changed during training; refusing to continue")
    model.coarse_heads.eval()
    model.fine_heads.eval()
    model.trained = True
    return model


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------


def render_view(
    pose: CameraPose,
    style_stats: StyleStatistics,
    model: MultiStyleModel,
    resolution: int | None = None,
    rng: torch.Generator | None = None,
    chunk: int = 4096,
    return_opacity: bool = False,
):
    """Full coarse+fine render with the style applied to every sample."""
    if not model.trained:
        raise StateError("model has no trained heads; train or load a checkpoint first")
    if resolution is not None:
        pose = pose.scaled(resolution)
    return render_image(
        model.field(style_stats, "coarse"),
        model.field(style_stats, "fine"),
        pose,
        model.near,
        model.far,
        model.nerf_config,
        rng=rng,
        perturb=rng is not None,
        chunk=chunk,
        return_opacity=return_opacity,
    )
