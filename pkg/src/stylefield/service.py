"""Read-only HTTP render service over a trained multi-style checkpoint.

Endpoints:
  GET  /styles                      registered styles with thumbnail URLs
  GET  /styles/{style_id}/thumbnail small PNG of the style image
  POST /render                      RenderRequest -> PNG bytes
  GET  /healthz                     checkpoint digests

The model and registry are immutable after startup; renders run on a
bounded pool (at most ``max_concurrent`` in flight, excess requests get
503 + Retry-After). Identical request + seed always returns identical
bytes.
"""

from __future__ import annotations

import io
import threading
import time
from pathlib import Path
from typing import Literal

import torch
from fastapi import FastAPI, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import multistyle as ms
from .data import RunConfig, encode_png, file_digest, load_scene, read_image, run_paths
from .errors import StateError, ValidationError
from .rendering import CameraPose, orbit_pose

RESOLUTIONS = (64, 128, 256)


class OrbitSpec(BaseModel):
    model_config = ConfigDict(extra="forbid")
    azimuth: float
    elevation: float
    radius: float | None = None  # None = training-set mean radius


class PoseSpec(BaseModel):
    """Exactly one of: training-pose index, explicit 4x4 camera-to-world
    matrix, or orbit parameters."""

    model_config = ConfigDict(extra="forbid")
    index: int | None = None
    matrix: list[list[float]] | None = None
    orbit: OrbitSpec | None = None

    @model_validator(mode="after")
    def _exactly_one(self):
        forms = [self.index is not None, self.matrix is not None, self.orbit is not None]
        if sum(forms) != 1:
            raise ValueError("exactly one pose form (index | matrix | orbit) must be present")
        return self


class StyleSpec(BaseModel):
    """Exactly one of: a single style_id, an interpolation pair with a
    blend weight, or a style_id with an intensity."""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)
    style_id: str | None = None
    style_a: str | None = None
    style_b: str | None = None
    lam: float | None = Field(default=None, alias="lambda", ge=0.0, le=1.0)
    intensity: float | None = Field(default=None, ge=0.0, le=1.0)

    @model_validator(mode="after")
    def _exactly_one(self):
        single = self.style_id is not None and self.intensity is None
        pair = self.style_a is not None or self.style_b is not None or self.lam is not None
        dialed = self.style_id is not None and self.intensity is not None
        if pair:
            if self.style_id is not None or self.intensity is not None:
                raise ValueError("mix of style forms; use exactly one")
            if self.style_a is None or self.style_b is None or self.lam is None:
                raise ValueError("interpolation needs style_a, style_b and lambda")
            return self
        if dialed or single:
            return self
        raise ValueError("a style form is required: style_id | {style_a, style_b, lambda} | {style_id, intensity}")


class RenderRequest(BaseModel):
    model_config = ConfigDict(extra="forbid")
    pose: PoseSpec
    style: StyleSpec
    resolution: Literal[64, 128, 256] = 128
    seed: int = 0


class ServiceState:
    """Everything loaded once at startup, shared read-only by handlers."""

    def __init__(self, run_dir: Path):
        paths = run_paths(run_dir)
        checkpoint_path = paths.checkpoint("multistyle")
        if not checkpoint_path.exists():
            raise StateError(
                f"no stage-3 checkpoint at {checkpoint_path}; train the multi-style model first"
            )
        if not paths.registry.exists():
            raise StateError(f"no style registry at {paths.registry}")
        self.run_dir = run_dir
        self.registry = ms.StyleRegistry.load(paths.registry)
        self.model = ms.load_multistyle_model(checkpoint_path, self.registry.digest())
        self.checkpoint_digest = file_digest(checkpoint_path)
        self.registry_digest = self.registry.digest()
        config = RunConfig.from_file(paths.config)
        scene = load_scene(config.scene, config.near, config.far)
        self.poses = scene.poses
        self.mean_radius = scene.mean_camera_radius()
        self.base_pose = scene.poses[0]

    def resolve_pose(self, spec: PoseSpec, resolution: int) -> CameraPose:
        if spec.index is not None:
            if not 0 <= spec.index < len(self.poses):
                raise ValidationError(
                    f"pose.index {spec.index} outside [0, {len(self.poses)})"
                )
            return self.poses[spec.index].scaled(resolution)
        if spec.matrix is not None:
            base = self.base_pose
            pose = CameraPose.from_matrix(spec.matrix, base.focal, base.height, base.width)
            return pose.scaled(resolution)
        orbit = spec.orbit
        radius = orbit.radius if orbit.radius is not None else self.mean_radius
        base = self.base_pose
        pose = orbit_pose(orbit.azimuth, orbit.elevation, radius, base.height, base.width, base.focal)
        return pose.scaled(resolution)

    def resolve_style(self, spec: StyleSpec):
        if spec.style_a is not None:
            a = self.registry.get(spec.style_a).stats
            b = self.registry.get(spec.style_b).stats
            return ms.interpolate_styles(a, b, spec.lam)
        stats = self.registry.get(spec.style_id).stats
        if spec.intensity is not None:
            content = self.registry.get(ms.CONTENT_STYLE_ID).stats
            return ms.set_intensity(stats, content, spec.intensity)
        return stats


def create_app(run_dir, max_concurrent: int = 2, ui_dir=None) -> FastAPI:
    state = ServiceState(Path(run_dir))
    app = FastAPI(title="stylefield render service")
    budget = threading.Semaphore(max_concurrent)

    @app.exception_handler(RequestValidationError)
    async def on_invalid(request, exc: RequestValidationError):
        detail = [
            {"field": ".".join(str(p) for p in err["loc"]), "message": err["msg"]}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"detail": detail})

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "checkpoint_digest": state.checkpoint_digest,
            "registry_digest": state.registry_digest,
            "trunk_digest": state.model.trunk_digest,
        }

    @app.get("/styles")
    def styles():
        return [
            {
                "style_id": entry.style_id,
                "name": entry.name,
                "thumbnail": f"/styles/{entry.style_id}/thumbnail",
            }
            for entry in state.registry.entries
        ]

    @app.get("/styles/{style_id}/thumbnail")
    def thumbnail(style_id: str):
        if style_id not in state.registry:
            return JSONResponse(status_code=422, content={"detail": f"unknown style_id {style_id!r}"})
        entry = state.registry.get(style_id)
        image = read_image(state.run_dir / entry.image_path)
        pil = Image.fromarray((image * 255).astype("uint8"))
        pil.thumbnail((64, 64))
        buf = io.BytesIO()
        pil.save(buf, format="PNG")
        return Response(content=buf.getvalue(), media_type="image/png")

    @app.post("/render")
    def render(request: RenderRequest):
        for style_id in (request.style.style_id, request.style.style_a, request.style.style_b):
            if style_id is not None and style_id not in state.registry:
                return JSONResponse(
                    status_code=422, content={"detail": f"unknown style_id {style_id!r}"}
                )
        if request.style.intensity is not None and ms.CONTENT_STYLE_ID not in state.registry:
            return JSONResponse(
                status_code=422,
                content={"detail": "intensity control needs the content-as-style registry entry"},
            )
        try:
            pose = state.resolve_pose(request.pose, request.resolution)
            stats = state.resolve_style(request.style)
        except ValidationError as exc:
            return JSONResponse(status_code=400, content={"detail": str(exc)})

        if not budget.acquire(blocking=False):
            return Response(
                status_code=503,
                content="render budget saturated, retry shortly",
                headers={"Retry-After": "1"},
            )
        try:
            started = time.monotonic()
            rng = torch.Generator().manual_seed(request.seed)
            image = ms.render_view(pose, stats, state.model, rng=rng)
            png = encode_png(image.numpy())
            elapsed = time.monotonic() - started
        finally:
            budget.release()
        return Response(
            content=png,
            media_type="image/png",
            headers={"X-Render-Seconds": f"{elapsed:.3f}"},
        )

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
