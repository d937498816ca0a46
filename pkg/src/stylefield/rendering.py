"""Camera rays, Fourier feature encoding, depth sampling, and the
transmittance-weighted compositing sum.

Everything here is a pure function of its inputs plus an explicit RNG, so
callers may batch and parallelize freely. Conventions fixed once so renders
are bit-comparable across machines:

  * pixel centers sit at (i + 0.5, j + 0.5), row-major traversal;
  * the camera looks down its local -z axis, +x right, +y up;
  * encoded features are ordered sin-then-cos per frequency, frequencies
    ascending, so checkpoints stay portable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .errors import ValidationError

Tensor = torch.Tensor

# Added to every interval mass before CDF normalization so a degenerate
# all-zero weight vector still yields a valid distribution.
WEIGHT_FLOOR = 1e-5


# ---------------------------------------------------------------------------
# camera geometry
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CameraPose:
    """Extrinsics (camera-to-world) plus pinhole intrinsics for one view."""

    rotation: np.ndarray  # (3, 3) camera-to-world, orthonormal, det +1
    translation: np.ndarray  # (3,) camera center in world units
    focal: float  # pixels
    height: int
    width: int

    def __post_init__(self):
        rotation = np.asarray(self.rotation, dtype=np.float64)
        translation = np.asarray(self.translation, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "translation", translation)
        self.validate()

    def validate(self) -> None:
        if self.rotation.shape != (3, 3):
            raise ValidationError(f"rotation must be 3x3, got {self.rotation.shape}")
        if self.translation.shape != (3,):
            raise ValidationError(
                f"translation must have 3 components, got {self.translation.shape}"
            )
        if not np.isfinite(self.rotation).all() or not np.isfinite(self.translation).all():
            raise ValidationError("pose contains non-finite values")
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > 1e-5:
            raise ValidationError(f"rotation is not orthonormal (max deviation {err:.2e})")
        det = np.linalg.det(self.rotation)
        if abs(det - 1.0) > 1e-5:
            raise ValidationError(f"rotation must have determinant +1, got {det:.6f}")
        if not self.focal > 0:
            raise ValidationError(f"focal must be positive, got {self.focal}")
        if self.height < 1 or self.width < 1:
            raise ValidationError("image dimensions must be >= 1 pixel")

    @property
    def forward(self) -> np.ndarray:
        """World-space viewing direction (the rotated camera -z axis)."""
        return -self.rotation[:, 2]

    def camera_to_world(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @classmethod
    def from_matrix(cls, c2w, focal: float, height: int, width: int) -> "CameraPose":
        c2w = np.asarray(c2w, dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValidationError(f"camera-to-world matrix must be 4x4, got {c2w.shape}")
        return cls(c2w[:3, :3], c2w[:3, 3], focal, height, width)

    def scaled(self, resolution: int) -> "CameraPose":
        """Same field of view rendered at ``resolution`` x ``resolution``."""
        if resolution < 1:
            raise ValidationError("resolution must be >= 1")
        factor = resolution / self.width
        return CameraPose(
            self.rotation, self.translation, self.focal * factor, resolution, resolution
        )


def orbit_pose(
    azimuth_deg: float,
    elevation_deg: float,
    radius: float,
    height: int,
    width: int,
    focal: float,
) -> CameraPose:
    """Camera on a sphere around the origin, looking at the origin, z-up."""
    if radius <= 0:
        raise ValidationError("orbit radius must be positive")
    elevation_deg = float(np.clip(elevation_deg, -89.0, 89.0))
    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    eye = radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
    backward = eye / np.linalg.norm(eye)  # camera +z points away from the target
    world_up = np.array([0.0, 0.0, 1.0])
    right = np.cross(world_up, backward)
    right = right / np.linalg.norm(right)
    up = np.cross(backward, right)
    rotation = np.stack([right, up, backward], axis=1)
    return CameraPose(rotation, eye, focal, height, width)


@dataclass(frozen=True)
class Ray:
    """A single camera ray with its sampling bounds."""

    origin: np.ndarray
    direction: np.ndarray  # unit
    near: float
    far: float

    def __post_init__(self):
        origin = np.asarray(self.origin, dtype=np.float64).reshape(-1)
        direction = np.asarray(self.direction, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "direction", direction)
        if origin.shape != (3,) or direction.shape != (3,):
            raise ValidationError("ray origin/direction must be 3-vectors")
        norm = np.linalg.norm(direction)
        if abs(norm - 1.0) > 1e-6:
            raise ValidationError(f"ray direction must be unit length, |d| = {norm:.8f}")
        if not (0 <= self.near < self.far):
            raise ValidationError(f"need 0 <= near < far, got near={self.near} far={self.far}")


@dataclass
class RayBatch:
    """One ray per pixel (or an arbitrary subset), vectorized."""

    origins: Tensor  # (R, 3)
    directions: Tensor  # (R, 3), unit rows
    near: float
    far: float

    def __len__(self) -> int:
        return self.origins.shape[0]

    def ray(self, index: int) -> Ray:
        return Ray(
            self.origins[index].numpy(),
            self.directions[index].numpy(),
            self.near,
            self.far,
        )

    def select(self, index: Tensor) -> "RayBatch":
        return RayBatch(self.origins[index], self.directions[index], self.near, self.far)


def generate_rays(pose: CameraPose, near: float, far: float, dtype=torch.float32) -> RayBatch:
    """One ray per pixel in row-major order.

    Origins all equal the camera center; the ray through the principal
    point is the rotated camera forward axis (-z).
    """
    pose.validate()
    if not (0 <= near < far):
        raise ValidationError(f"need 0 <= near < far, got near={near} far={far}")
    ii = torch.arange(pose.width, dtype=dtype) + 0.5
    jj = torch.arange(pose.height, dtype=dtype) + 0.5
    rows, cols = torch.meshgrid(jj, ii, indexing="ij")
    dirs_cam = torch.stack(
        [
            (cols - pose.width * 0.5) / pose.focal,
            -(rows - pose.height * 0.5) / pose.focal,
            -torch.ones_like(cols),
        ],
        dim=-1,
    ).reshape(-1, 3)
    rotation = torch.from_numpy(pose.rotation).to(dtype)
    directions = dirs_cam @ rotation.T
    directions = directions / directions.norm(dim=-1, keepdim=True)
    origins = torch.from_numpy(pose.translation).to(dtype).expand_as(directions)
    return RayBatch(origins, directions, float(near), float(far))


# ---------------------------------------------------------------------------
# Fourier feature encoding
# ---------------------------------------------------------------------------


def positional_encode(v: Tensor, n_freqs: int) -> Tensor:
    """Map coordinates to Fourier features.

    For frequencies 1, 2, ..., 2^(L-1) (ascending) the output concatenates
    sin(f*v) over all components, then cos(f*v), so a k-dim input becomes
    2*L*k features. The raw input is not appended.
    """
    if n_freqs < 1:
        raise ValidationError(f"n_freqs must be >= 1, got {n_freqs}")
    if not torch.isfinite(v).all():
        raise ValidationError("positional_encode input must be finite")
    parts = []
    for level in range(n_freqs):
        fv = v * float(2**level)
        parts.append(torch.sin(fv))
        parts.append(torch.cos(fv))
    return torch.cat(parts, dim=-1)


def encoding_dim(n_components: int, n_freqs: int) -> int:
    return 2 * n_freqs * n_components


# ---------------------------------------------------------------------------
# depth sampling
# ---------------------------------------------------------------------------


def stratified_sample(
    near: float,
    far: float,
    n_samples: int,
    rng: torch.Generator | None = None,
    *,
    u: Tensor | None = None,
    n_rays: int | None = None,
    dtype=torch.float32,
) -> Tensor:
    """One depth uniformly inside each of ``n_samples`` equal-width bins.

    ``u`` optionally supplies the per-bin uniforms (trailing dim must be
    ``n_samples``); otherwise they are drawn from ``rng``. Output is sorted
    ascending by construction, shaped like ``u`` (or ``(n_rays, n_samples)``
    / ``(n_samples,)`` when drawn here).
    """
    if n_samples < 1:
        raise ValidationError(f"n_samples must be >= 1, got {n_samples}")
    if not near < far:
        raise ValidationError(f"need near < far, got near={near} far={far}")
    if u is None:
        shape = (n_samples,) if n_rays is None else (n_rays, n_samples)
        u = torch.rand(shape, generator=rng, dtype=dtype)
    else:
        if u.shape[-1] != n_samples:
            raise ValidationError(f"u trailing dim must be {n_samples}, got {u.shape[-1]}")
        if (u < 0).any() or (u > 1).any():
            raise ValidationError("u must lie in [0, 1]")
    width = (far - near) / n_samples
    offsets = torch.arange(n_samples, dtype=u.dtype)
    return near + (offsets + u) * width


def hierarchical_sample(
    coarse_t: Tensor,
    weights: Tensor,
    n_fine: int,
    rng: torch.Generator | None = None,
    *,
    u: Tensor | None = None,
) -> Tensor:
    """Inverse-CDF samples from the piecewise-constant density proportional
    to ``weights`` over consecutive ``coarse_t`` intervals.

    ``coarse_t`` has shape (..., S) strictly increasing; ``weights`` has
    shape (..., S-1) and is nonnegative. A floor of ``WEIGHT_FLOOR`` is
    added to every interval mass before normalization, so an all-zero
    vector still defines a CDF. Returned depths are sorted and never leave
    [coarse_t[..., 0], coarse_t[..., -1]].
    """
    if n_fine < 1:
        raise ValidationError(f"n_fine must be >= 1, got {n_fine}")
    if coarse_t.shape[-1] < 2:
        raise ValidationError("need at least two coarse depths")
    if weights.shape != coarse_t.shape[:-1] + (coarse_t.shape[-1] - 1,):
        raise ValidationError(
            f"weights shape {tuple(weights.shape)} does not match "
            f"{coarse_t.shape[-1] - 1} intervals of coarse_t {tuple(coarse_t.shape)}"
        )
    if not torch.isfinite(weights).all():
        raise ValidationError("weights must be finite")
    if (weights < 0).any():
        raise ValidationError("weights must be nonnegative")
    if (coarse_t.diff(dim=-1) <= 0).any():
        raise ValidationError("coarse_t must be strictly increasing")

    masses = weights + WEIGHT_FLOOR
    pdf = masses / masses.sum(dim=-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)  # (..., S)

    if u is None:
        u = torch.rand(coarse_t.shape[:-1] + (n_fine,), generator=rng, dtype=coarse_t.dtype)
    else:
        if u.shape[-1] != n_fine:
            raise ValidationError(f"u trailing dim must be {n_fine}, got {u.shape[-1]}")
        if (u < 0).any() or (u > 1).any():
            raise ValidationError("u must lie in [0, 1]")

    hi = torch.searchsorted(cdf.contiguous(), u.contiguous(), right=True)
    hi = hi.clamp(1, cdf.shape[-1] - 1)
    lo = hi - 1
    cdf_lo = torch.gather(cdf, -1, lo)
    cdf_hi = torch.gather(cdf, -1, hi)
    span = cdf_hi - cdf_lo
    span = torch.where(span < 1e-12, torch.ones_like(span), span)
    # Clamp: float roundoff can leave cdf[-1] < 1, and u at the top of that
    # gap must not push a sample past the last coarse depth.
    frac = ((u - cdf_lo) / span).clamp(0.0, 1.0)
    t_lo = torch.gather(coarse_t, -1, lo)
    t_hi = torch.gather(coarse_t, -1, hi)
    samples = t_lo + frac * (t_hi - t_lo)
    # The lerp can overshoot an endpoint by one ulp; pin the global range.
    samples = torch.maximum(samples, coarse_t[..., :1])
    samples = torch.minimum(samples, coarse_t[..., -1:])
    return torch.sort(samples, dim=-1).values


# ---------------------------------------------------------------------------
# compositing
# ---------------------------------------------------------------------------


def deltas_from_depths(t_values: Tensor, far: float) -> Tensor:
    """Consecutive depth gaps; the last sample gets (far - t_last)."""
    tail = (far - t_values[..., -1:]).clamp_min(0.0)
    return torch.cat([t_values.diff(dim=-1), tail], dim=-1)


@dataclass
class QuadratureBatch:
    """Per-ray samples feeding the compositing sum."""

    t_values: Tensor  # (R, S), strictly increasing along S
    deltas: Tensor  # (R, S), >= 0
    sigmas: Tensor  # (R, S), >= 0
    colors: Tensor  # (R, S, 3), in [0, 1]

    @classmethod
    def from_samples(cls, t_values: Tensor, sigmas: Tensor, colors: Tensor, far: float):
        return cls(t_values, deltas_from_depths(t_values, far), sigmas, colors)

    def validate(self) -> None:
        if self.t_values.shape != self.deltas.shape or self.t_values.shape != self.sigmas.shape:
            raise ValidationError("t_values, deltas, sigmas must share shape")
        if self.colors.shape != self.sigmas.shape + (3,):
            raise ValidationError(
                f"colors must be shaped {tuple(self.sigmas.shape)} + (3,), got {tuple(self.colors.shape)}"
            )
        if (self.t_values.diff(dim=-1) <= 0).any():
            raise ValidationError("t_values must be strictly increasing per ray")
        if (self.deltas < 0).any():
            raise ValidationError("deltas must be nonnegative")
        if (self.sigmas < 0).any():
            raise ValidationError("sigmas must be nonnegative")
        if (self.colors < 0).any() or (self.colors > 1).any():
            raise ValidationError("colors must lie in [0, 1]")


@dataclass
class CompositeResult:
    color: Tensor  # (R, 3)
    weights: Tensor  # (R, S)
    opacity: Tensor  # (R,)


def composite(batch: QuadratureBatch) -> CompositeResult:
    """Transmittance-weighted sum along each ray.

    w_i = T_i * (1 - exp(-sigma_i * delta_i)) with
    T_i = exp(-sum_{j<i} sigma_j * delta_j), so T_1 = 1 exactly and
    sum_i w_i telescopes to 1 - exp(-sum_i sigma_i * delta_i). The result
    is differentiable w.r.t. sigmas and colors.
    """
    batch.validate()
    tau = batch.sigmas * batch.deltas
    accumulated = torch.cumsum(tau, dim=-1)
    transmittance = torch.exp(tau - accumulated)  # exclusive prefix: T_1 = exp(0) = 1
    weights = transmittance * (1.0 - torch.exp(-tau))
    color = (weights.unsqueeze(-1) * batch.colors).sum(dim=-2)
    opacity = weights.sum(dim=-1)
    return CompositeResult(color=color, weights=weights, opacity=opacity)
