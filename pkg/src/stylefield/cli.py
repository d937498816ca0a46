"""Single entry-point command driving all three stages and offline rendering.

Exit codes: 0 success, 1 validation failure (single-line cause on stderr),
2 runtime failure. Progress is emitted as line-delimited JSON on stdout.
The environment variable STYLEFIELD_RUN_ROOT resolves relative run
directory names.
"""

from __future__ import annotations

import json
import os
import sys
from pathlib import Path

import click
import torch

from . import adain as adain_mod
from . import multistyle as ms
from .data import (
    RunConfig,
    load_checkpoint,
    load_scene,
    read_image,
    run_lock,
    run_paths,
    write_image,
)
from .errors import StyleFieldError, ValidationError
from .nerf import TrainedNerf, evaluate_psnr, train_nerf
from .rendering import orbit_pose

RUN_ROOT_ENV = "STYLEFIELD_RUN_ROOT"


def emit(record: dict) -> None:
    click.echo(json.dumps(record))


def resolve_run_dir(run_dir: str) -> Path:
    path = Path(run_dir)
    root = os.environ.get(RUN_ROOT_ENV)
    if not path.is_absolute() and root:
        path = Path(root) / path
    return path


def load_run_config(run_dir: Path, config_file: str | None, overrides: tuple[str, ...]) -> RunConfig:
    """File < run-dir archive < flags; the merged result is archived."""
    paths = run_paths(run_dir)
    if config_file:
        config = RunConfig.from_file(config_file)
    elif paths.config.exists():
        config = RunConfig.from_file(paths.config)
    else:
        config = RunConfig()
    for item in overrides:
        if "=" not in item:
            raise ValidationError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        config.apply_override(key, value)
    config.validate()
    return config


def archive_config(config: RunConfig, run_dir: Path) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    config.save(run_paths(run_dir).config)


@click.group()
def cli():
    """Multi-style scene stylization: train, stylize, render, serve."""


common_run = click.option("--run-dir", required=True, help="Run directory (relative names resolve under $STYLEFIELD_RUN_ROOT).")
common_config = click.option("--config", "config_file", default=None, help="Run config JSON; defaults to the run directory's archived config.")
common_set = click.option("--set", "overrides", multiple=True, help="Override a config key, e.g. --set nerf.steps=500.")


@cli.command("train-adain")
@common_run
@common_config
@common_set
@click.option("--scene", default=None, help="Scene directory (content images).")
@click.option("--styles", default=None, help="Comma-separated style image paths or a directory.")
def cmd_train_adain(run_dir, config_file, overrides, scene, styles):
    """Train the 2D stylizer decoder on the scene's images."""
    run_dir = resolve_run_dir(run_dir)
    config = load_run_config(run_dir, config_file, overrides)
    if scene:
        config.scene = scene
    if styles:
        config.styles = _style_list(styles)
    if not config.scene:
        raise ValidationError("no scene configured; pass --scene or set it in the config")
    if not config.styles:
        raise ValidationError("no styles configured; pass --styles or set them in the config")
    config.validate()
    with run_lock(run_dir) as paths:
        archive_config(config, run_dir)
        dataset = load_scene(config.scene, config.near, config.far)
        content = [dataset.images[i] for i in dataset.train_indices]
        style_images = [read_image(p) for p in config.styles]
        stylizer = adain_mod.train_adain(
            content, style_images, config.adain, seed=config.seed, progress=emit, log_every=25
        )
        stylizer.save(paths.checkpoint("adain"), run_config=config.to_dict())
        emit({"stage": "adain", "event": "saved", "path": str(paths.checkpoint("adain"))})


def _style_list(styles: str) -> list[str]:
    path = Path(styles)
    if path.is_dir():
        found = sorted(str(p) for p in path.iterdir() if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not found:
            raise ValidationError(f"style directory {path} holds no images")
        return found
    return [s for s in styles.split(",") if s]


@cli.command("stylize")
@click.option("--checkpoint", "checkpoint_path", default=None, help="Stage-1 checkpoint; defaults to <run-dir>/checkpoints/adain.pt.")
@click.option("--run-dir", default=None)
@click.option("--content", required=True, type=click.Path())
@click.option("--style", required=True, type=click.Path())
@click.option("--alpha", default=1.0, show_default=True, help="Stylization strength in [0, 1].")
@click.option("--out", "out_path", required=True, type=click.Path())
def cmd_stylize(checkpoint_path, run_dir, content, style, alpha, out_path):
    """Stylize one image with a trained stage-1 checkpoint."""
    if checkpoint_path is None:
        if run_dir is None:
            raise ValidationError("pass --checkpoint or --run-dir")
        checkpoint_path = run_paths(resolve_run_dir(run_dir)).checkpoint("adain")
    stylizer = adain_mod.AdainStylizer.load(checkpoint_path)
    result = stylizer.stylize(read_image(content), read_image(style), alpha)
    write_image(out_path, result)
    emit({"stage": "adain", "event": "stylized", "path": str(out_path)})


@cli.command("train-nerf")
@common_run
@common_config
@common_set
@click.option("--scene", default=None)
def cmd_train_nerf(run_dir, config_file, overrides, scene):
    """Train the vanilla radiance field on the posed scene images."""
    run_dir = resolve_run_dir(run_dir)
    config = load_run_config(run_dir, config_file, overrides)
    if scene:
        config.scene = scene
    if not config.scene:
        raise ValidationError("no scene configured; pass --scene or set it in the config")
    config.validate()
    with run_lock(run_dir) as paths:
        archive_config(config, run_dir)
        dataset = load_scene(config.scene, config.near, config.far)
        model = train_nerf(dataset, config.nerf, seed=config.seed, progress=emit)
        val_psnr = evaluate_psnr(model, dataset, "val")
        model.save(paths.checkpoint("nerf"), run_config=config.to_dict())
        emit(
            {
                "stage": "nerf",
                "event": "saved",
                "path": str(paths.checkpoint("nerf")),
                "val_psnr": val_psnr,
            }
        )


@cli.command("build-stylized")
@common_run
@common_config
@common_set
@click.option("--styles", default=None)
@click.option("--include-content/--no-include-content", default=None,
              help="Also register the original images as a style.")
def cmd_build_stylized(run_dir, config_file, overrides, styles, include_content):
    """Stylize every frame with every style; write the grid and registry."""
    run_dir = resolve_run_dir(run_dir)
    config = load_run_config(run_dir, config_file, overrides)
    if styles:
        config.styles = _style_list(styles)
    if include_content is not None:
        config.multistyle.include_content_as_style = include_content
    if not config.styles:
        raise ValidationError("no styles configured")
    config.validate()
    with run_lock(run_dir) as paths:
        archive_config(config, run_dir)
        dataset = load_scene(config.scene, config.near, config.far)
        stylizer = adain_mod.AdainStylizer.load(paths.checkpoint("adain"))
        stylized = ms.build_stylized_dataset(
            dataset,
            config.styles,
            stylizer,
            run_dir,
            include_content_as_style=config.multistyle.include_content_as_style,
        )
        emit(
            {
                "stage": "multistyle",
                "event": "stylized-dataset",
                "frames": len(dataset),
                "styles": stylized.registry.style_ids,
            }
        )


@cli.command("train-multistyle")
@common_run
@common_config
@common_set
@click.option("--density-aware/--no-density-aware", default=None,
              help="Let density depend on the style statistics.")
def cmd_train_multistyle(run_dir, config_file, overrides, density_aware):
    """Train the style-conditioned heads over the frozen trunk."""
    run_dir = resolve_run_dir(run_dir)
    config = load_run_config(run_dir, config_file, overrides)
    if density_aware is not None:
        config.multistyle.density_aware = density_aware
    config.validate()
    with run_lock(run_dir) as paths:
        archive_config(config, run_dir)
        dataset = load_scene(config.scene, config.near, config.far)
        stylized = ms.load_stylized_dataset(run_dir, dataset)
        nerf_model = TrainedNerf.from_checkpoint(load_checkpoint(paths.checkpoint("nerf"), "nerf"))
        model = ms.train_multistyle(
            stylized, nerf_model, config.multistyle, seed=config.seed, progress=emit
        )
        model.save(
            paths.checkpoint("multistyle"),
            registry_digest=stylized.registry.digest(),
            run_config=config.to_dict(),
        )
        emit({"stage": "multistyle", "event": "saved", "path": str(paths.checkpoint("multistyle"))})


def _load_stage3(run_dir: Path):
    paths = run_paths(run_dir)
    registry = ms.StyleRegistry.load(paths.registry)
    model = ms.load_multistyle_model(paths.checkpoint("multistyle"), registry.digest())
    return model, registry


def _scene_poses(run_dir: Path):
    config = RunConfig.from_file(run_paths(run_dir).config)
    scene = load_scene(config.scene, config.near, config.far)
    return config, scene


@cli.command("render")
@common_run
@click.option("--style", "style_id", required=True)
@click.option("--pose-index", type=int, default=None, help="Training pose to render.")
@click.option("--orbit", "orbit_frames", type=int, default=None, is_flag=False, flag_value=60,
              help="Render an orbit sweep: a circle of poses at the training-set "
                   "mean radius (60 poses unless a count is given).")
@click.option("--resolution", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_path", required=True, type=click.Path(),
              help="Output PNG (single pose) or directory (orbit).")
def cmd_render(run_dir, style_id, pose_index, orbit_frames, resolution, seed, out_path):
    """Render a trained multi-style model at a pose or around an orbit."""
    run_dir = resolve_run_dir(run_dir)
    if (pose_index is None) == (orbit_frames is None):
        raise ValidationError("pass exactly one of --pose-index or --orbit")
    model, registry = _load_stage3(run_dir)
    stats = registry.get(style_id).stats
    config, scene = _scene_poses(run_dir)

    if pose_index is not None:
        if not 0 <= pose_index < len(scene):
            raise ValidationError(f"pose index {pose_index} outside [0, {len(scene)})")
        rng = torch.Generator().manual_seed(seed)
        image = ms.render_view(scene.poses[pose_index], stats, model, resolution, rng)
        write_image(out_path, image.numpy())
        emit({"stage": "render", "event": "frame", "path": str(out_path)})
        return

    out_dir = Path(out_path)
    out_dir.mkdir(parents=True, exist_ok=True)
    radius = scene.mean_camera_radius()
    base = scene.poses[0]
    for index in range(orbit_frames):
        azimuth = 360.0 * index / orbit_frames
        pose = orbit_pose(azimuth, 20.0, radius, base.height, base.width, base.focal)
        rng = torch.Generator().manual_seed(seed)
        image = ms.render_view(pose, stats, model, resolution, rng)
        frame_path = out_dir / f"orbit_{index:03d}.png"
        write_image(frame_path, image.numpy())
        emit({"stage": "render", "event": "frame", "path": str(frame_path)})


@cli.command("interpolate")
@common_run
@click.option("--style-a", required=True)
@click.option("--style-b", required=True)
@click.option("--steps", "n_steps", type=int, default=11, show_default=True)
@click.option("--pose-index", type=int, default=0, show_default=True)
@click.option("--resolution", type=int, default=None)
@click.option("--seed", type=int, default=0)
@click.option("--out", "out_dir", required=True, type=click.Path())
def cmd_interpolate(run_dir, style_a, style_b, n_steps, pose_index, resolution, seed, out_dir):
    """Render a sweep of blends between two styles, frames named by blend weight."""
    if n_steps < 2:
        raise ValidationError("need at least 2 interpolation steps")
    run_dir = resolve_run_dir(run_dir)
    model, registry = _load_stage3(run_dir)
    stats_a = registry.get(style_a).stats
    stats_b = registry.get(style_b).stats
    _, scene = _scene_poses(run_dir)
    if not 0 <= pose_index < len(scene):
        raise ValidationError(f"pose index {pose_index} outside [0, {len(scene)})")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for index in range(n_steps):
        lam = index / (n_steps - 1)
        stats = ms.interpolate_styles(stats_a, stats_b, lam)
        rng = torch.Generator().manual_seed(seed)
        image = ms.render_view(scene.poses[pose_index], stats, model, resolution, rng)
        frame_path = out_dir / f"lambda_{lam:.2f}.png"
        write_image(frame_path, image.numpy())
        emit({"stage": "render", "event": "frame", "lambda": lam, "path": str(frame_path)})


@cli.command("serve")
@common_run
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--ui-dir", default=None, help="Static viewer bundle to serve at /ui.")
def cmd_serve(run_dir, host, port, ui_dir):
    """Start the read-only HTTP render service for a trained run."""
    import uvicorn

    from .service import create_app

    app = create_app(resolve_run_dir(run_dir), ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None) -> int:
    """Run the CLI with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        else:
            click.echo(cli.get_usage(click.Context(cli)), err=True)
        return 1
    except ValidationError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except StyleFieldError as exc:
        click.echo(f"error: {exc}", err=True)
        return 2
    except Exception as exc:  # noqa: BLE001 - the contract maps any runtime failure to 2
        click.echo(f"error: {type(exc).__name__}: {exc}", err=True)
        return 2


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
