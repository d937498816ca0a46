"""Vanilla radiance field: trunk-plus-heads MLP, coarse/fine rendering,
and photometric training. The trained trunk is what the multi-style stage
freezes and reuses.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import NerfConfig, SceneDataset, make_checkpoint, save_checkpoint
from .errors import ValidationError
from .rendering import (
    CameraPose,
    QuadratureBatch,
    RayBatch,
    composite,
    encoding_dim,
    generate_rays,
    hierarchical_sample,
    positional_encode,
    stratified_sample,
)

Tensor = torch.Tensor

# (sigma, rgb) as functions of raw positions and unit directions.
RadianceField = Callable[[Tensor, Tensor], tuple[Tensor, Tensor]]


class Trunk(nn.Module):
    """Position-only MLP with one skip connection re-injecting the encoded
    input at ``skip_layer``."""

    def __init__(self, in_dim: int, depth: int, width: int, skip_layer: int):
        super().__init__()
        if not 0 <= skip_layer < depth:
            raise ValidationError(f"skip_layer must be in [0, {depth}), got {skip_layer}")
        self.in_dim = in_dim
        self.depth = depth
        self.width = width
        self.skip_layer = skip_layer
        layers = []
        for i in range(depth):
            d_in = in_dim if i == 0 else width
            if i == skip_layer and i > 0:
                d_in += in_dim
            layers.append(nn.Linear(d_in, width))
        self.layers = nn.ModuleList(layers)

    def forward(self, x_enc: Tensor, n_layers: int | None = None) -> Tensor:
        keep = self.depth if n_layers is None else n_layers
        if not 1 <= keep <= self.depth:
            raise ValidationError(f"n_layers must be in [1, {self.depth}], got {keep}")
        h = x_enc
        for i, layer in enumerate(self.layers[:keep]):
            if i == self.skip_layer and i > 0:
                h = torch.cat([h, x_enc], dim=-1)
            h = F.relu(layer(h))
        return h


class NerfNetwork(nn.Module):
    """Density from position features only; color from the trunk feature
    joined with the encoded view direction."""

    def __init__(
        self,
        depth: int = 8,
        width: int = 256,
        skip_layer: int = 4,
        n_freq_position: int = 10,
        n_freq_direction: int = 4,
    ):
        super().__init__()
        self.n_freq_position = n_freq_position
        self.n_freq_direction = n_freq_direction
        pos_dim = encoding_dim(3, n_freq_position)
        dir_dim = encoding_dim(3, n_freq_direction)
        self.trunk = Trunk(pos_dim, depth, width, skip_layer)
        self.density_head = nn.Linear(width, 1)
        self.feature_head = nn.Linear(width, width)
        self.color_head = nn.Sequential(
            nn.Linear(width + dir_dim, width // 2),
            nn.ReLU(),
            nn.Linear(width // 2, 3),
        )

    @classmethod
    def from_config(cls, config: NerfConfig) -> "NerfNetwork":
        return cls(
            depth=config.depth,
            width=config.width,
            skip_layer=config.skip_layer,
            n_freq_position=config.n_freq_position,
            n_freq_direction=config.n_freq_direction,
        )

    def forward(self, positions: Tensor, directions: Tensor) -> tuple[Tensor, Tensor]:
        x_enc = positional_encode(positions, self.n_freq_position)
        d_enc = positional_encode(directions, self.n_freq_direction)
        h = self.trunk(x_enc)
        sigma = F.relu(self.density_head(h)).squeeze(-1)
        feature = self.feature_head(h)
        rgb = torch.sigmoid(self.color_head(torch.cat([feature, d_enc], dim=-1)))
        return sigma, rgb


def check_unit_directions(directions: Tensor, tol: float = 1e-5) -> None:
    norms = directions.norm(dim=-1)
    err = (norms - 1.0).abs().max()
    if err > tol:
        raise ValidationError(f"directions must be unit vectors (max |norm-1| = {err:.2e})")


def nerf_forward(positions: Tensor, directions: Tensor, network: RadianceField):
    """Query the field at raw positions/unit directions."""
    if positions.shape != directions.shape:
        raise ValidationError("positions and directions must share shape")
    check_unit_directions(directions)
    return network(positions, directions)


@dataclass
class RenderResult:
    color_coarse: Tensor  # (R, 3)
    color_fine: Tensor  # (R, 3)
    opacity_coarse: Tensor  # (R,)
    opacity_fine: Tensor  # (R,)
    weights_fine: Tensor  # (R, n_coarse + n_fine)
    t_fine: Tensor  # (R, n_coarse + n_fine)
    n_samples_fine: int


def _run_pass(
    field: RadianceField, rays: RayBatch, t_values: Tensor
) -> tuple[QuadratureBatch, Tensor, Tensor]:
    positions = rays.origins[:, None, :] + t_values[..., None] * rays.directions[:, None, :]
    directions = rays.directions[:, None, :].expand_as(positions)
    sigma, rgb = field(positions.reshape(-1, 3), directions.reshape(-1, 3))
    sigma = sigma.reshape(t_values.shape)
    rgb = rgb.reshape(t_values.shape + (3,))
    batch = QuadratureBatch.from_samples(t_values, sigma, rgb, rays.far)
    result = composite(batch)
    return batch, result, sigma


def render_rays(
    rays: RayBatch,
    coarse_field: RadianceField,
    fine_field: RadianceField,
    config: NerfConfig,
    rng: torch.Generator | None = None,
    perturb: bool = True,
    white_background: bool | None = None,
) -> RenderResult:
    """Coarse stratified pass, importance resampling from the coarse
    weights, then the fine pass over the merged depths."""
    n_rays = len(rays)
    if perturb:
        u_coarse = torch.rand((n_rays, config.n_coarse), generator=rng)
    else:
        u_coarse = torch.full((n_rays, config.n_coarse), 0.5)
    t_coarse = stratified_sample(rays.near, rays.far, config.n_coarse, u=u_coarse)

    _, coarse_out, _ = _run_pass(coarse_field, rays, t_coarse)

    if config.n_fine > 0:
        weights = coarse_out.weights.detach()
        interval_mass = 0.5 * (weights[:, 1:] + weights[:, :-1])
        if perturb:
            u_fine = torch.rand((n_rays, config.n_fine), generator=rng)
        else:
            u_fine = (torch.arange(config.n_fine) + 0.5).expand(n_rays, -1) / config.n_fine
        t_extra = hierarchical_sample(t_coarse, interval_mass, config.n_fine, u=u_fine)
        t_fine = torch.sort(torch.cat([t_coarse, t_extra], dim=-1), dim=-1).values
        # A resampled depth can land exactly on a coarse depth; nudge merged
        # depths apart so the quadrature's strict ordering holds.
        if bool((t_fine.diff(dim=-1) <= 0).any()):
            ramp = torch.arange(t_fine.shape[-1], dtype=t_fine.dtype) * 1e-6
            t_fine = t_fine + ramp
    else:
        t_fine = t_coarse

    _, fine_out, _ = _run_pass(fine_field, rays, t_fine)

    white = config.white_background if white_background is None else white_background
    color_coarse, color_fine = coarse_out.color, fine_out.color
    if white:
        color_coarse = color_coarse + (1.0 - coarse_out.opacity[:, None])
        color_fine = color_fine + (1.0 - fine_out.opacity[:, None])

    return RenderResult(
        color_coarse=color_coarse,
        color_fine=color_fine,
        opacity_coarse=coarse_out.opacity,
        opacity_fine=fine_out.opacity,
        weights_fine=fine_out.weights,
        t_fine=t_fine,
        n_samples_fine=t_fine.shape[-1],
    )


def render_image(
    coarse_field: RadianceField,
    fine_field: RadianceField,
    pose: CameraPose,
    near: float,
    far: float,
    config: NerfConfig,
    rng: torch.Generator | None = None,
    perturb: bool = False,
    chunk: int = 4096,
    return_opacity: bool = False,
):
    """Full-frame render, chunked so memory stays flat."""
    rays = generate_rays(pose, near, far)
    colors, opacities = [], []
    with torch.no_grad():
        for start in range(0, len(rays), chunk):
            index = torch.arange(start, min(start + chunk, len(rays)))
            out = render_rays(
                rays.select(index), coarse_field, fine_field, config, rng=rng, perturb=perturb
            )
            colors.append(out.color_fine)
            opacities.append(out.opacity_fine)
    image = torch.cat(colors).reshape(pose.height, pose.width, 3).clamp(0.0, 1.0)
    if return_opacity:
        opacity = torch.cat(opacities).reshape(pose.height, pose.width)
        return image, opacity
    return image


def psnr(mse: float) -> float:
    if mse <= 0:
        return float("inf")
    return -10.0 * float(np.log10(mse))


@dataclass
class TrainedNerf:
    coarse: NerfNetwork
    fine: NerfNetwork
    config: NerfConfig
    near: float
    far: float

    def checkpoint(self, run_config: dict | None = None) -> dict:
        return make_checkpoint(
            stage="nerf",
            weights={"coarse": self.coarse.state_dict(), "fine": self.fine.state_dict()},
            config={
                "nerf": self.config.__dict__,
                "near": self.near,
                "far": self.far,
                "run": run_config or {},
            },
        )

    def save(self, path, run_config: dict | None = None) -> None:
        save_checkpoint(self.checkpoint(run_config), path)

    @classmethod
    def from_checkpoint(cls, checkpoint: dict) -> "TrainedNerf":
        config = NerfConfig(**checkpoint["config"]["nerf"])
        coarse = NerfNetwork.from_config(config)
        fine = NerfNetwork.from_config(config)
        coarse.load_state_dict(checkpoint["weights"]["coarse"])
        fine.load_state_dict(checkpoint["weights"]["fine"])
        coarse.eval()
        fine.eval()
        return cls(coarse, fine, config, checkpoint["config"]["near"], checkpoint["config"]["far"])


def flatten_rays(dataset: SceneDataset, indices: list[int]) -> tuple[RayBatch, Tensor]:
    """All rays and target pixels of the given frames, concatenated."""
    origins, directions, targets = [], [], []
    for index in indices:
        rays = generate_rays(dataset.poses[index], dataset.near, dataset.far)
        origins.append(rays.origins)
        directions.append(rays.directions)
        targets.append(torch.from_numpy(dataset.images[index].reshape(-1, 3)))
    batch = RayBatch(
        torch.cat(origins), torch.cat(directions), dataset.near, dataset.far
    )
    return batch, torch.cat(targets)


def train_nerf(
    dataset: SceneDataset,
    config: NerfConfig,
    seed: int = 0,
    progress=None,
    log_every: int = 25,
) -> TrainedNerf:
    """Minimize squared photometric error of both passes over random ray
    batches. Batch draws are re-seeded per step so runs are reproducible
    and resumable."""
    train_idx = dataset.train_indices
    if len(train_idx) < 2:
        raise ValidationError("need at least two training views")

    torch.manual_seed(seed)
    coarse = NerfNetwork.from_config(config)
    fine = NerfNetwork.from_config(config)
    params = list(coarse.parameters()) + list(fine.parameters())
    optimizer = torch.optim.Adam(params, lr=config.learning_rate)

    all_rays, all_targets = flatten_rays(dataset, train_idx)
    n_rays_total = len(all_rays)

    for step in range(config.steps):
        rng = torch.Generator().manual_seed(seed * 1_000_003 + step)
        pick = torch.randint(0, n_rays_total, (config.ray_batch,), generator=rng)
        rays = all_rays.select(pick)
        target = all_targets[pick]

        out = render_rays(rays, coarse, fine, config, rng=rng, perturb=True)
        loss_coarse = F.mse_loss(out.color_coarse, target)
        loss_fine = F.mse_loss(out.color_fine, target)
        loss = loss_coarse + loss_fine

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        decay = config.lr_decay_factor ** (1.0 / config.lr_decay_steps)
        for group in optimizer.param_groups:
            group["lr"] = config.learning_rate * decay ** (step + 1)

        if progress is not None and (step % log_every == 0 or step == config.steps - 1):
            progress(
                {
                    "stage": "nerf",
                    "step": step,
                    "loss": float(loss.detach()),
                    "psnr": psnr(float(loss_fine.detach())),
                }
            )

    coarse.eval()
    fine.eval()
    return TrainedNerf(coarse, fine, config, dataset.near, dataset.far)


def evaluate_psnr(model: TrainedNerf, dataset: SceneDataset, split: str = "val") -> float:
    """Mean PSNR of deterministic full renders against ground truth."""
    indices = dataset.indices(split) or dataset.train_indices
    values = []
    for index in indices:
        image = render_image(
            model.coarse, model.fine, dataset.poses[index], dataset.near, dataset.far,
            model.config, perturb=False,
        )
        mse = float(F.mse_loss(image, torch.from_numpy(dataset.images[index])))
        values.append(psnr(mse))
    return float(np.mean(values))
