"""2D stylization by feature-statistic alignment.

A frozen convolutional encoder extracts features at four stages whose
channel counts double (64, 128, 256, 512) while spatial dims halve. The
transform re-scales content features channelwise to a target mean/std, and
a trainable mirror decoder maps transformed features back to RGB. The same
encoder later supplies the per-style conditioning statistics for the
style-conditioned radiance field.

Pretrained classification weights are not bundled; the encoder draws its
frozen weights from a fixed seed and is pinned by digest, which keeps every
statistic, checkpoint, and training contract reproducible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .data import (
    AdainConfig,
    load_checkpoint,
    make_checkpoint,
    read_image,
    save_checkpoint,
    weights_digest,
)
from .errors import CheckpointDigestError, ValidationError

Tensor = torch.Tensor

STAT_CHANNELS = (64, 128, 256, 512)
FLATTENED_DIM = 2 * sum(STAT_CHANNELS)  # 1920
INSTANCE_NORM_EPS = 1e-5
ENCODER_SEED = 0x5EED
MIN_IMAGE_SIDE = 32


def _seeded_conv(conv: nn.Conv2d, generator: torch.Generator) -> None:
    fan_in = conv.in_channels * conv.kernel_size[0] * conv.kernel_size[1]
    std = math.sqrt(2.0 / fan_in)
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=generator) * std)
        conv.bias.zero_()


class PerceptualEncoder(nn.Module):
    """Frozen four-stage feature ladder; one reflection-padded 3x3 conv per
    stage, max-pool halving between stages."""

    def __init__(self, seed: int = ENCODER_SEED):
        super().__init__()
        channels = (3,) + STAT_CHANNELS
        self.convs = nn.ModuleList(
            nn.Conv2d(channels[i], channels[i + 1], 3, padding=1, padding_mode="reflect")
            for i in range(len(STAT_CHANNELS))
        )
        generator = torch.Generator().manual_seed(seed)
        for conv in self.convs:
            _seeded_conv(conv, generator)
        self.pool = nn.MaxPool2d(2)
        self.requires_grad_(False)
        self.eval()

    def forward(self, images: Tensor) -> tuple[Tensor, ...]:
        """Features at each stage's first activation; deepest is last."""
        features = []
        h = images
        for index, conv in enumerate(self.convs):
            if index > 0:
                h = self.pool(h)
            h = F.relu(conv(h))
            features.append(h)
        return tuple(features)

    @property
    def digest(self) -> str:
        return weights_digest(self.state_dict())


class StylizedDecoder(nn.Module):
    """Mirror of the encoder: nearest-neighbor upsampling between
    reflection-padded convs, no normalization layers."""

    def __init__(self):
        super().__init__()
        self.convs = nn.ModuleList(
            [
                nn.Conv2d(512, 256, 3, padding=1, padding_mode="reflect"),
                nn.Conv2d(256, 128, 3, padding=1, padding_mode="reflect"),
                nn.Conv2d(128, 64, 3, padding=1, padding_mode="reflect"),
                nn.Conv2d(64, 3, 3, padding=1, padding_mode="reflect"),
            ]
        )

    def forward(self, features: Tensor) -> Tensor:
        h = features
        for conv in self.convs[:-1]:
            h = F.relu(conv(h))
            h = F.interpolate(h, scale_factor=2, mode="nearest")
        return self.convs[-1](h)


def _as_batch(image: Tensor) -> Tensor:
    if image.dim() == 3:
        return image.unsqueeze(0)
    return image


def encode(image: Tensor, encoder: PerceptualEncoder) -> tuple[Tensor, ...]:
    """Run the frozen encoder on a (3, H, W) or (B, 3, H, W) image in [0, 1]."""
    batch = _as_batch(image)
    if batch.dim() != 4 or batch.shape[1] != 3:
        raise ValidationError(f"expected 3-channel image, got shape {tuple(image.shape)}")
    if batch.shape[-2] < MIN_IMAGE_SIDE or batch.shape[-1] < MIN_IMAGE_SIDE:
        raise ValidationError(
            f"image sides must be >= {MIN_IMAGE_SIDE}, got {tuple(batch.shape[-2:])}"
        )
    with torch.no_grad() if not batch.requires_grad else torch.enable_grad():
        features = encoder(batch)
    if image.dim() == 3:
        features = tuple(f.squeeze(0) for f in features)
    return features


def channel_stats(features: Tensor, eps: float = 0.0) -> tuple[Tensor, Tensor]:
    """Channelwise spatial mean and population std of (..., C, H, W)."""
    flat = features.flatten(start_dim=-2)
    mean = flat.mean(dim=-1)
    std = torch.sqrt(flat.var(dim=-1, unbiased=False) + eps)
    return mean, std


def adain_transform(
    content: Tensor,
    style_mean: Tensor,
    style_std: Tensor,
    eps: float = INSTANCE_NORM_EPS,
) -> Tensor:
    """Re-scale content features so each channel matches the target mean/std.

    output = style_std * (content - mean_c) / (std_c + eps) + style_mean,
    computed over the spatial dims per channel. Constant channels
    (std_c = 0) collapse to the target mean.
    """
    channels = content.shape[-3]
    if style_mean.shape[-1] != channels or style_std.shape[-1] != channels:
        raise ValidationError(
            f"channel mismatch: content has {channels}, targets have "
            f"{style_mean.shape[-1]}/{style_std.shape[-1]}"
        )
    mean_c, std_c = channel_stats(content)
    shape = content.shape[:-2] + (1, 1)
    normalized = (content - mean_c.reshape(shape)) / (std_c.reshape(shape) + eps)
    return normalized * style_std.reshape(style_std.shape + (1, 1)) + style_mean.reshape(
        style_mean.shape + (1, 1)
    )


@dataclass
class StyleStatistics:
    """Channelwise means and stds of a style image's encoder features,
    one (mean, std) pair per stage; the conditioning signal for the
    style-conditioned radiance field."""

    means: tuple[Tensor, ...]
    stds: tuple[Tensor, ...]

    def __post_init__(self):
        if len(self.means) != len(self.stds):
            raise ValidationError("means and stds must pair up per layer")
        for mean, std in zip(self.means, self.stds):
            if mean.shape != std.shape or mean.dim() != 1:
                raise ValidationError("per-layer statistics must be matching vectors")
            if (std < 0).any():
                raise ValidationError("stds must be nonnegative")

    @property
    def channels(self) -> tuple[int, ...]:
        return tuple(int(m.shape[0]) for m in self.means)

    @property
    def flattened_dim(self) -> int:
        return 2 * sum(self.channels)

    def flatten(self) -> Tensor:
        """Fixed layout: (mean_l, std_l) per layer, layers in encoder order."""
        parts = []
        for mean, std in zip(self.means, self.stds):
            parts.append(mean)
            parts.append(std)
        return torch.cat(parts)

    @classmethod
    def from_flat(cls, vector: Tensor, channels=STAT_CHANNELS) -> "StyleStatistics":
        expected = 2 * sum(channels)
        if vector.shape != (expected,):
            raise ValidationError(f"expected a {expected}-vector, got {tuple(vector.shape)}")
        means, stds, offset = [], [], 0
        for c in channels:
            means.append(vector[offset : offset + c])
            stds.append(vector[offset + c : offset + 2 * c])
            offset += 2 * c
        return cls(tuple(means), tuple(stds))


def extract_style_statistics(image: Tensor, encoder: PerceptualEncoder) -> StyleStatistics:
    """Channelwise mean/std at every statistic layer (population convention)."""
    if image.dim() == 4 and image.shape[0] != 1:
        raise ValidationError("statistics are per image; pass one image at a time")
    features = encode(image, encoder)
    means, stds = [], []
    for feature in features:
        mean, std = channel_stats(feature.squeeze(0) if feature.dim() == 4 else feature)
        means.append(mean.detach())
        stds.append(std.detach())
    return StyleStatistics(tuple(means), tuple(stds))


def adain_loss(
    stylized: Tensor,
    target_features: Tensor,
    style_stats: StyleStatistics,
    style_weight: float,
    encoder: PerceptualEncoder,
) -> tuple[Tensor, Tensor, Tensor]:
    """total = content_term + style_weight * statistic_term.

    The content term is the squared distance between the stylized image's
    deepest features and the transformed target features; the statistic
    term sums squared mean/std distances at every statistic layer.
    """
    if style_weight < 0:
        raise ValidationError("style_weight must be >= 0")
    features = encoder(_as_batch(stylized))
    content_term = F.mse_loss(features[-1], _as_batch(target_features).expand_as(features[-1]))
    style_term = stylized.new_zeros(())
    for feature, mean_target, std_target in zip(features, style_stats.means, style_stats.stds):
        # eps inside the sqrt keeps the gradient finite on constant
        # channels; the target side gets the same regularization so equal
        # statistics still score exactly zero.
        mean, std = channel_stats(feature, eps=INSTANCE_NORM_EPS)
        std_target = torch.sqrt(std_target**2 + INSTANCE_NORM_EPS)
        style_term = style_term + F.mse_loss(mean, mean_target.expand_as(mean))
        style_term = style_term + F.mse_loss(std, std_target.expand_as(std))
    total = content_term + style_weight * style_term
    return total, content_term, style_term


# ---------------------------------------------------------------------------
# the trained stylizer
# ---------------------------------------------------------------------------


class AdainStylizer:
    """Encoder + trained decoder bundle; all inference methods are
    read-only and safe for concurrent callers."""

    def __init__(self, encoder: PerceptualEncoder, decoder: StylizedDecoder, config: AdainConfig):
        self.encoder = encoder
        self.decoder = decoder
        self.config = config
        self.decoder.eval()

    def stylize_tensor(self, content: Tensor, style: Tensor, alpha: float = 1.0) -> Tensor:
        if not 0.0 <= alpha <= 1.0:
            raise ValidationError(f"alpha must lie in [0, 1], got {alpha}")
        content_feats = encode(content, self.encoder)[-1]
        style_stats = extract_style_statistics(style, self.encoder)
        mean, std = style_stats.means[-1], style_stats.stds[-1]
        transformed = adain_transform(content_feats, mean, std)
        blended = alpha * transformed + (1.0 - alpha) * content_feats
        with torch.no_grad():
            image = self.decoder(_as_batch(blended)).squeeze(0)
        return image.clamp(0.0, 1.0)

    def stylize(self, content: np.ndarray, style: np.ndarray, alpha: float = 1.0) -> np.ndarray:
        """Stylize one HxWx3 [0, 1] image; returns the same layout."""
        content_t = torch.from_numpy(np.ascontiguousarray(content)).permute(2, 0, 1)
        style_t = torch.from_numpy(np.ascontiguousarray(style)).permute(2, 0, 1)
        out = self.stylize_tensor(content_t, style_t, alpha)
        return out.permute(1, 2, 0).numpy()

    def style_statistics(self, image: np.ndarray) -> StyleStatistics:
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
        return extract_style_statistics(tensor, self.encoder)

    def save(self, path, run_config: dict | None = None) -> None:
        checkpoint = make_checkpoint(
            stage="adain",
            weights={"decoder": self.decoder.state_dict()},
            config={"adain": self.config.__dict__, "run": run_config or {}},
            digests={"encoder": self.encoder.digest},
        )
        save_checkpoint(checkpoint, path)

    @classmethod
    def load(cls, path, encoder: PerceptualEncoder | None = None) -> "AdainStylizer":
        checkpoint = load_checkpoint(path, expected_stage="adain")
        encoder = encoder or PerceptualEncoder()
        recorded = checkpoint["digests"].get("encoder")
        if recorded != encoder.digest:
            raise CheckpointDigestError(
                f"checkpoint was trained against encoder {recorded}, "
                f"this build provides {encoder.digest}"
            )
        decoder = StylizedDecoder()
        decoder.load_state_dict(checkpoint["weights"]["decoder"])
        config = AdainConfig(**checkpoint["config"]["adain"])
        return cls(encoder, decoder, config)


def _prepare_batch(
    images: list[np.ndarray], config: AdainConfig, rng: torch.Generator
) -> Tensor:
    """Stack a training batch, optionally resize-then-crop per config."""
    tensors = []
    for image in images:
        tensor = torch.from_numpy(np.ascontiguousarray(image)).permute(2, 0, 1)
        if config.resize_to is not None:
            short = min(tensor.shape[-2:])
            if short != config.resize_to:
                scale = config.resize_to / short
                size = [max(MIN_IMAGE_SIDE, round(s * scale)) for s in tensor.shape[-2:]]
                tensor = F.interpolate(
                    tensor.unsqueeze(0), size=size, mode="bilinear", align_corners=False
                ).squeeze(0)
        if config.crop_size is not None and (
            tensor.shape[-2] > config.crop_size or tensor.shape[-1] > config.crop_size
        ):
            max_row = tensor.shape[-2] - config.crop_size
            max_col = tensor.shape[-1] - config.crop_size
            row = int(torch.randint(0, max_row + 1, (1,), generator=rng))
            col = int(torch.randint(0, max_col + 1, (1,), generator=rng))
            tensor = tensor[:, row : row + config.crop_size, col : col + config.crop_size]
        tensors.append(tensor)
    batch = torch.stack(tensors)
    if batch.shape[-2] < MIN_IMAGE_SIDE or batch.shape[-1] < MIN_IMAGE_SIDE:
        raise ValidationError(
            f"training images must be >= {MIN_IMAGE_SIDE} px per side after cropping"
        )
    return batch


def train_adain(
    content_images: list[np.ndarray],
    style_images: list[np.ndarray],
    config: AdainConfig,
    seed: int = 0,
    encoder: PerceptualEncoder | None = None,
    initial: AdainStylizer | None = None,
    progress=None,
    log_every: int = 1,
) -> AdainStylizer:
    """Train the decoder; the encoder never updates.

    Batch composition is re-seeded per step from ``seed``, so training is
    reproducible and resuming from a checkpoint replays the same stream.
    """
    if not content_images:
        raise ValidationError("content corpus is empty")
    if not style_images:
        raise ValidationError("style corpus is empty")
    if config.max_content is not None:
        content_images = content_images[: config.max_content]

    encoder = encoder or (initial.encoder if initial is not None else PerceptualEncoder())
    if initial is not None:
        decoder = StylizedDecoder()
        decoder.load_state_dict(initial.decoder.state_dict())
    else:
        torch.manual_seed(seed)
        decoder = StylizedDecoder()
    decoder.train()
    optimizer = torch.optim.Adam(decoder.parameters(), lr=config.learning_rate)

    style_tensors = [
        torch.from_numpy(np.ascontiguousarray(s)).permute(2, 0, 1) for s in style_images
    ]
    style_stats = [extract_style_statistics(s, encoder) for s in style_tensors]

    for step in range(config.steps):
        rng = torch.Generator().manual_seed(seed * 1_000_003 + step)
        content_idx = torch.randint(0, len(content_images), (config.batch_size,), generator=rng)
        style_idx = int(torch.randint(0, len(style_images), (1,), generator=rng))
        batch = _prepare_batch([content_images[i] for i in content_idx], config, rng)

        stats = style_stats[style_idx]
        with torch.no_grad():
            content_feats = encoder(batch)[-1]
            target = adain_transform(content_feats, stats.means[-1], stats.stds[-1])
        stylized = decoder(target)
        total, content_term, style_term = adain_loss(
            stylized, target, stats, config.style_weight, encoder
        )
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
        if progress is not None and (step % log_every == 0 or step == config.steps - 1):
            progress(
                {
                    "stage": "adain",
                    "step": step,
                    "loss": float(total.detach()),
                    "content_loss": float(content_term.detach()),
                    "style_loss": float(style_term.detach()),
                }
            )

    decoder.eval()
    return AdainStylizer(encoder, decoder, config)


def load_images(paths) -> list[np.ndarray]:
    return [read_image(p) for p in paths]
