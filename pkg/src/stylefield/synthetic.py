"""Procedural fixtures: a colored-cube scene and a handful of style images.

The cube renderer is analytic (slab-test ray/box intersection), so scene
images depend only on the camera model, never on any learned component.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .data import focal_from_fov, write_image
from .rendering import CameraPose, generate_rays, orbit_pose

CUBE_HALF_SIZE = 0.8

# +x, -x, +y, -y, +z, -z
FACE_COLORS = np.array(
    [
        [0.90, 0.15, 0.15],
        [0.10, 0.75, 0.80],
        [0.15, 0.80, 0.20],
        [0.85, 0.20, 0.80],
        [0.20, 0.25, 0.90],
        [0.95, 0.85, 0.15],
    ],
    dtype=np.float32,
)


def render_cube_image(pose: CameraPose, background: float = 1.0) -> np.ndarray:
    """Flat-shaded axis-aligned cube at the origin on a uniform background."""
    rays = generate_rays(pose, near=0.1, far=100.0)
    origins = rays.origins.numpy().astype(np.float64)
    directions = rays.directions.numpy().astype(np.float64)

    half = CUBE_HALF_SIZE
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / directions
    t_lo = (-half - origins) * inv
    t_hi = (half - origins) * inv
    t_near_axis = np.minimum(t_lo, t_hi)
    t_far_axis = np.maximum(t_lo, t_hi)
    t_enter = t_near_axis.max(axis=1)
    t_exit = t_far_axis.min(axis=1)
    hit = (t_exit >= t_enter) & (t_exit > 0)

    # Entry face: the axis whose slab bound is crossed last, signed by ray direction.
    axis = t_near_axis.argmax(axis=1)
    sign = np.take_along_axis(directions, axis[:, None], axis=1)[:, 0] < 0
    face = axis * 2 + np.where(sign, 0, 1)  # entering against +axis means the +face

    image = np.full((len(origins), 3), background, dtype=np.float32)
    image[hit] = FACE_COLORS[face[hit]]
    return image.reshape(pose.height, pose.width, 3)


def make_cube_scene(
    out_dir,
    n_train: int = 20,
    n_val: int = 5,
    image_size: int = 64,
    radius: float = 4.0,
    fov_x: float = 0.8,
    near: float = 2.0,
    far: float = 6.0,
    seed: int = 0,
) -> Path:
    """Write a posed multi-view cube scene in the scene directory layout."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    focal = focal_from_fov(fov_x, image_size)

    frames = []
    total = n_train + n_val
    azimuths = np.linspace(0.0, 360.0, total, endpoint=False)
    elevations = rng.uniform(-35.0, 55.0, size=total)
    order = rng.permutation(total)
    for index in range(total):
        azimuth = float(azimuths[order[index]])
        elevation = float(elevations[index])
        pose = orbit_pose(azimuth, elevation, radius, image_size, image_size, focal)
        frame_id = f"frame_{index:05d}"
        write_image(out_dir / "images" / f"{frame_id}.png", render_cube_image(pose))
        frames.append(
            {
                "file_path": f"images/{frame_id}",
                "transform_matrix": pose.camera_to_world().tolist(),
                "split": "train" if index < n_train else "val",
            }
        )

    meta = {"camera_angle_x": fov_x, "near": near, "far": far, "frames": frames}
    with open(out_dir / "transforms.json", "w") as fh:
        json.dump(meta, fh, indent=2)
    return out_dir


def make_style_images(out_dir, n_styles: int = 3, size: int = 96, seed: int = 7) -> list[Path]:
    """A few synthetic style images with distinct color statistics."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    paths = []
    for index in range(n_styles):
        kind = index % 3
        if kind == 0:
            # Warm horizontal gradient with soft banding.
            x = np.broadcast_to(np.linspace(0.0, 1.0, size)[None, :], (size, size))
            y = np.broadcast_to(np.linspace(0.0, 1.0, size)[:, None], (size, size))
            image = np.stack(
                [0.8 * x + 0.2, 0.3 + 0.3 * np.sin(6.0 * np.pi * y), 1.0 - 0.7 * x],
                axis=2,
            )
        elif kind == 1:
            # Two-tone checkerboard.
            cells = 8
            grid = np.indices((size, size)).sum(axis=0) // (size // cells) % 2
            a = rng.uniform(0.1, 0.9, size=3)
            b = rng.uniform(0.1, 0.9, size=3)
            image = np.where(grid[..., None] == 0, a, b)
        else:
            # Radial two-tone gradient; low-frequency styles keep the
            # stylized multi-view grid consistent enough for 3D fitting.
            y, x = np.mgrid[0:size, 0:size]
            r = np.sqrt((x - size / 2) ** 2 + (y - size / 2) ** 2) / (size / 2)
            r = np.clip(r, 0.0, 1.0)[..., None]
            inner = np.array([0.95, 0.55, 0.10])
            outer = np.array([0.15, 0.10, 0.70])
            image = inner * (1 - r) + outer * r
        image = np.clip(image, 0.0, 1.0).astype(np.float32)
        path = out_dir / f"style_{index:02d}.png"
        write_image(path, image)
        paths.append(path)
    return paths
