"""Shared fixtures: a toy end-to-end run for CLI/service tests and the
desk-scale reference run backing the acceptance suite.

The reference run is the frozen CPU-scale configuration: a colored-cube
scene (20 train / 5 val views, 64x64), 3 procedural styles, reduced
network sizes and step counts sized for a 2-core box. Set
STYLEFIELD_TEST_CACHE=<dir> to persist it across pytest invocations while
iterating; without the variable every session builds it fresh.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pytest
import torch

from stylefield.adain import AdainStylizer, PerceptualEncoder, train_adain
from stylefield.data import (
    AdainConfig,
    MultiStyleConfig,
    NerfConfig,
    RunConfig,
    SceneDataset,
    load_checkpoint,
    load_scene,
    read_image,
    run_paths,
)
from stylefield.multistyle import (
    MultiStyleModel,
    StylizedDataset,
    build_stylized_dataset,
    load_multistyle_model,
    load_stylized_dataset,
    train_multistyle,
)
from stylefield.nerf import TrainedNerf, evaluate_psnr, train_nerf
from stylefield.synthetic import make_cube_scene, make_style_images

# ---------------------------------------------------------------------------
# frozen reference configuration (CPU-reduced; see tests/test_acceptance.py
# for the floors recorded from the first reference run)
# ---------------------------------------------------------------------------

REFERENCE_SEED = 0

REFERENCE_ADAIN = AdainConfig(
    steps=400, batch_size=2, learning_rate=1e-4, style_weight=10.0,
    resize_to=None, crop_size=None,
)
REFERENCE_NERF = NerfConfig(
    depth=4, width=128, skip_layer=2, n_coarse=32, n_fine=32, ray_batch=512,
    learning_rate=5e-4, lr_decay_steps=20_000, steps=1200,
)
REFERENCE_MS = MultiStyleConfig(
    trunk_split=4, steps=1500, ray_batch=512, learning_rate=5e-4,
    lr_decay_steps=20_000,
)


def reference_fingerprint() -> str:
    blob = json.dumps(
        {
            "seed": REFERENCE_SEED,
            "scene": {"n_train": 20, "n_val": 5, "size": 64},
            "styles": 3,
            "adain": REFERENCE_ADAIN.__dict__,
            "nerf": REFERENCE_NERF.__dict__,
            "ms": REFERENCE_MS.__dict__,
        },
        sort_keys=True,
    )
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class ReferenceRun:
    root: Path
    scene: SceneDataset
    style_paths: list[Path]
    encoder: PerceptualEncoder
    stylizer: AdainStylizer
    nerf_model: TrainedNerf
    nerf_val_psnr: float
    stylized: StylizedDataset
    model: MultiStyleModel
    traces: dict = field(default_factory=dict)

    @property
    def run_dir(self) -> Path:
        return self.root / "run"


def _trace_path(root: Path, stage: str) -> Path:
    return root / "run" / "logs" / f"{stage}.jsonl"


def _save_trace(root: Path, stage: str, records: list[dict]) -> None:
    path = _trace_path(root, stage)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record) + "\n")


def _load_trace(root: Path, stage: str) -> list[dict]:
    with open(_trace_path(root, stage)) as fh:
        return [json.loads(line) for line in fh]


def _build_reference(root: Path) -> ReferenceRun:
    root.mkdir(parents=True, exist_ok=True)
    scene_dir = root / "cube"
    make_cube_scene(scene_dir, n_train=20, n_val=5, image_size=64, seed=0)
    style_paths = make_style_images(root / "style_images", 3)
    scene = load_scene(scene_dir)
    run_dir = root / "run"
    encoder = PerceptualEncoder()

    traces: dict[str, list[dict]] = {"adain": [], "nerf": [], "multistyle": []}
    stylizer = train_adain(
        [scene.images[i] for i in scene.train_indices],
        [read_image(p) for p in style_paths],
        REFERENCE_ADAIN,
        seed=REFERENCE_SEED,
        encoder=encoder,
        progress=traces["adain"].append,
    )
    stylizer.save(run_paths(run_dir).checkpoint("adain"))

    nerf_model = train_nerf(
        scene, REFERENCE_NERF, seed=REFERENCE_SEED,
        progress=traces["nerf"].append, log_every=10,
    )
    nerf_val_psnr = evaluate_psnr(nerf_model, scene, "val")
    nerf_model.save(run_paths(run_dir).checkpoint("nerf"))

    stylized = build_stylized_dataset(
        scene, style_paths, stylizer, run_dir, include_content_as_style=True
    )
    model = train_multistyle(
        stylized, nerf_model, REFERENCE_MS, seed=REFERENCE_SEED,
        progress=traces["multistyle"].append, log_every=5,
    )
    model.save(run_paths(run_dir).checkpoint("multistyle"), stylized.registry.digest())

    config = RunConfig(
        scene=str(scene_dir), styles=[str(p) for p in style_paths], out_dir=str(run_dir),
        seed=REFERENCE_SEED, adain=REFERENCE_ADAIN, nerf=REFERENCE_NERF, multistyle=REFERENCE_MS,
    )
    config.save(run_paths(run_dir).config)

    for stage, records in traces.items():
        _save_trace(root, stage, records)
    (root / "fingerprint").write_text(reference_fingerprint())
    (root / "val_psnr").write_text(repr(nerf_val_psnr))
    return ReferenceRun(
        root, scene, style_paths, encoder, stylizer, nerf_model, nerf_val_psnr,
        stylized, model, traces,
    )


def _load_reference(root: Path) -> ReferenceRun:
    scene = load_scene(root / "cube")
    style_paths = sorted((root / "style_images").glob("*.png"))
    run_dir = root / "run"
    encoder = PerceptualEncoder()
    stylizer = AdainStylizer.load(run_paths(run_dir).checkpoint("adain"), encoder)
    nerf_model = TrainedNerf.from_checkpoint(
        load_checkpoint(run_paths(run_dir).checkpoint("nerf"), "nerf")
    )
    stylized = load_stylized_dataset(run_dir, scene)
    model = load_multistyle_model(
        run_paths(run_dir).checkpoint("multistyle"), stylized.registry.digest()
    )
    traces = {stage: _load_trace(root, stage) for stage in ("adain", "nerf", "multistyle")}
    return ReferenceRun(
        root, scene, style_paths, encoder, stylizer, nerf_model,
        float((root / "val_psnr").read_text()), stylized, model, traces,
    )


@pytest.fixture(scope="session")
def reference_run(tmp_path_factory) -> ReferenceRun:
    cache = os.environ.get("STYLEFIELD_TEST_CACHE")
    if cache:
        root = Path(cache)
        marker = root / "fingerprint"
        if marker.exists() and marker.read_text() == reference_fingerprint():
            return _load_reference(root)
        return _build_reference(root)
    return _build_reference(tmp_path_factory.mktemp("reference"))


# ---------------------------------------------------------------------------
# toy run: everything wired, seconds to build
# ---------------------------------------------------------------------------

TOY_ADAIN = AdainConfig(steps=2, batch_size=1, resize_to=None, crop_size=None)
TOY_NERF = NerfConfig(
    depth=2, width=32, skip_layer=1, n_coarse=8, n_fine=8, ray_batch=64,
    steps=4, n_freq_position=4, n_freq_direction=2,
)
TOY_MS = MultiStyleConfig(
    trunk_split=2, style_hidden_dim=32, style_embed_dim=16, view_embed_dim=16,
    rgb_hidden_dim=16, density_embed_dim=8, steps=4, ray_batch=64,
)


@pytest.fixture(scope="session")
def toy_run(tmp_path_factory) -> dict:
    """A complete run directory (all three checkpoints, registry, config)."""
    root = tmp_path_factory.mktemp("toy")
    scene_dir = root / "cube"
    make_cube_scene(scene_dir, n_train=4, n_val=1, image_size=32, seed=1)
    style_paths = make_style_images(root / "style_images", 2, size=48)
    scene = load_scene(scene_dir)
    run_dir = root / "run"
    paths = run_paths(run_dir)

    encoder = PerceptualEncoder()
    stylizer = train_adain(
        [scene.images[i] for i in scene.train_indices],
        [read_image(p) for p in style_paths],
        TOY_ADAIN, seed=1, encoder=encoder,
    )
    stylizer.save(paths.checkpoint("adain"))
    nerf_model = train_nerf(scene, TOY_NERF, seed=1)
    nerf_model.save(paths.checkpoint("nerf"))
    stylized = build_stylized_dataset(scene, style_paths, stylizer, run_dir)
    model = train_multistyle(stylized, nerf_model, TOY_MS, seed=1)
    model.save(paths.checkpoint("multistyle"), stylized.registry.digest())
    config = RunConfig(
        scene=str(scene_dir), styles=[str(p) for p in style_paths], out_dir=str(run_dir),
        seed=1, adain=TOY_ADAIN, nerf=TOY_NERF, multistyle=TOY_MS,
    )
    config.save(paths.config)
    return {
        "root": root,
        "run_dir": run_dir,
        "scene_dir": scene_dir,
        "scene": scene,
        "style_paths": style_paths,
        "stylized": stylized,
        "model": model,
    }
