"""HTTP service backing the interactive scribble UI.

A single in-process session holds the loaded scene, per-Gaussian features,
accumulated scribble strokes per view, and the latest diffusion result.
Diffusion jobs run on a worker thread (one at a time per session); readers
are never blocked and poll ``/api/result`` for completion. Masks are
rendered through the very same pipeline as the CLI ``segment`` command, so
given identical strokes, parameters and seed the served PNG bytes match the
CLI output exactly.
"""

from __future__ import annotations

import io
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .cli import pca_color_features
from .errors import ValidationError
from .graph import GraphParams, build_graph, diffuse
from .raster import render
from .scene import GaussianScene
from .segmentation import _apply_threshold
from .uplift import uplift


class ScribblePayload(BaseModel):
    view: str
    strokes: list[list[float]]
    label: str = "fg"


class DiffusePayload(BaseModel):
    T: int = 100
    bandwidth_edge: float = 0.5
    bandwidth_unary: float = 1.0
    unary_mode: str = "cosine_to_mean"
    g0_threshold: float = 0.5
    threshold_mode: str = "otsu"
    threshold_value: float = 0.5


@dataclass
class SessionState:
    scene: GaussianScene
    features: np.ndarray | None
    gt_masks: dict = field(default_factory=dict)
    seed: int = 0
    strokes: dict = field(default_factory=dict)  # view -> {key: (label, pts)}
    version: int = 0
    job: dict = field(default_factory=lambda: {"status": "idle", "id": 0})
    result: dict = field(default_factory=dict)  # view -> {mask, score}
    lock: threading.Lock = field(default_factory=threading.Lock)

    def stroke_mask(self, label: str) -> dict:
        """Per-view binary masks rasterized from the submitted strokes."""
        out = {}
        for view, entries in self.strokes.items():
            cam = self.scene.camera_by_id(view)
            mask = np.zeros((cam.height, cam.width))
            hit = False
            for lab, pts in entries.values():
                if lab != label:
                    continue
                for x, y in pts:
                    xi, yi = int(round(x)), int(round(y))
                    if 0 <= xi < cam.width and 0 <= yi < cam.height:
                        mask[yi, xi] = 1.0
                        hit = True
            if hit:
                out[view] = mask
        return out


def _png_bytes(channels: np.ndarray) -> bytes:
    from PIL import Image

    img = np.clip(channels, 0.0, 1.0)
    if img.ndim == 3 and img.shape[2] == 1:
        img = img[:, :, 0]
    arr = np.round(img * 255.0).astype(np.uint8)
    mode = "L" if arr.ndim == 2 else "RGB"
    buf = io.BytesIO()
    Image.fromarray(arr, mode=mode).save(buf, format="PNG")
    return buf.getvalue()


def run_diffusion(state: SessionState, params: DiffusePayload) -> dict:
    """The diffusion pipeline over the session's strokes (synchronous)."""
    scene = state.scene
    fg_masks = state.stroke_mask("fg")
    if not fg_masks:
        raise ValidationError("no foreground scribbles submitted")
    frames = [(scene.camera_by_id(v), m[:, :, None]) for v, m in fg_masks.items()]
    gf, _ = uplift(scene, frames)
    g0 = gf.values[:, 0].copy()
    mean = g0.mean()
    if mean <= 0:
        raise ValidationError("scribbles reached no Gaussians")
    g0 /= mean
    g0[g0 < params.g0_threshold] = 0.0
    anchors = np.flatnonzero(g0 > 0)
    if anchors.size == 0:
        raise ValidationError("anchor set empty; lower g0_threshold")

    blocked = None
    bg_masks = state.stroke_mask("bg")
    if bg_masks:
        bg_frames = [(scene.camera_by_id(v), m[:, :, None])
                     for v, m in bg_masks.items()]
        bg_gf, _ = uplift(scene, bg_frames)
        bg = bg_gf.values[:, 0].copy()
        bg_mean = bg.mean()
        if bg_mean > 0:
            bg /= bg_mean
            blocked = np.flatnonzero(bg >= params.g0_threshold)

    if state.features is None:
        raise ValidationError("service started without per-Gaussian features")
    graph_params = GraphParams(
        bandwidth_edge=params.bandwidth_edge,
        bandwidth_unary=params.bandwidth_unary,
        unary_mode=params.unary_mode,
        seed=state.seed,
    )
    centers = scene.means[scene.active_indices()]
    graph = build_graph(centers, state.features, graph_params,
                        anchors=anchors if params.unary_mode != "none" else None,
                        blocked=blocked)
    diff = diffuse(graph, g0, params.T, anchors=anchors)

    result = {}
    for cam in scene.cameras:
        out = render(scene, cam, diff.g)
        raw = out.channels[:, :, 0]
        m = raw.mean()
        norm = raw / m if m > 0 else raw
        mask = _apply_threshold(norm, params.threshold_mode,
                                params.threshold_value)
        entry = {"mask": mask, "score": norm}
        if cam.id in state.gt_masks:
            from .segmentation import iou

            entry["iou"] = iou(mask, state.gt_masks[cam.id])
        result[cam.id] = entry
    return result


def create_app(scene: GaussianScene, features: np.ndarray | None = None,
               gt_masks: dict | None = None, ui_dir: str | None = None,
               seed: int = 0) -> FastAPI:
    state = SessionState(scene=scene, features=features,
                         gt_masks=gt_masks or {}, seed=seed)
    app = FastAPI(title="splift scribble service")
    app.state.session = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.exception_handler(ValidationError)
    async def _validation_handler(request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    from fastapi.exceptions import RequestValidationError

    @app.exception_handler(RequestValidationError)
    async def _malformed_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    def camera_or_404(view: str):
        try:
            return scene.camera_by_id(view)
        except ValidationError:
            return None

    @app.get("/api/views")
    def views():
        return {
            "views": [
                {"id": c.id, "width": c.width, "height": c.height}
                for c in scene.cameras
            ],
            "version": state.version,
        }

    @app.get("/api/render")
    def render_view(view: str = Query(...), layer: str = Query("rgb")):
        cam = camera_or_404(view)
        if cam is None:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown view {view!r}"})
        if layer == "rgb":
            out = render(scene, cam)
            return Response(_png_bytes(out.channels), media_type="image/png")
        if layer == "pca":
            if state.features is None:
                return JSONResponse(status_code=400,
                                    content={"error": "no features loaded"})
            out = render(scene, cam, pca_color_features(state.features))
            return Response(_png_bytes(out.channels), media_type="image/png")
        if layer in ("score", "mask"):
            entry = state.result.get(view)
            if entry is None:
                return JSONResponse(status_code=404,
                                    content={"error": "no diffusion result yet"})
            if layer == "mask":
                return Response(_png_bytes(entry["mask"].astype(float)),
                                media_type="image/png")
            score = entry["score"]
            peak = score.max()
            return Response(
                _png_bytes(score / peak if peak > 0 else score),
                media_type="image/png",
            )
        return JSONResponse(status_code=400,
                            content={"error": f"unknown layer {layer!r}"})

    @app.post("/api/scribbles")
    def scribbles(payload: ScribblePayload):
        cam = camera_or_404(payload.view)
        if cam is None:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown view {payload.view!r}"})
        if payload.label not in ("fg", "bg"):
            return JSONResponse(status_code=400,
                                content={"error": f"bad label {payload.label!r}"})
        if not payload.strokes or not all(len(p) == 2 for p in payload.strokes):
            return JSONResponse(status_code=400,
                                content={"error": "strokes must be [x, y] pairs"})
        key = (payload.label, tuple(tuple(p) for p in payload.strokes))
        with state.lock:
            entries = state.strokes.setdefault(payload.view, {})
            if key not in entries:  # identical resubmission leaves state as-is
                entries[key] = (payload.label, payload.strokes)
                state.version += 1
        return {"version": state.version,
                "strokes": sum(len(v) for v in state.strokes.values())}

    @app.post("/api/diffuse")
    def diffuse_endpoint(params: DiffusePayload):
        with state.lock:
            if state.job["status"] == "running":
                return JSONResponse(status_code=409,
                                    content={"error": "job already running"})
            job_id = state.job["id"] + 1
            state.job = {"status": "running", "id": job_id, "error": None}

        def work():
            try:
                result = run_diffusion(state, params)
                with state.lock:
                    state.result = result
                    state.version += 1
                    state.job = {"status": "done", "id": job_id, "error": None}
            except Exception as e:  # surfaced via /api/result
                with state.lock:
                    state.job = {"status": "error", "id": job_id,
                                 "error": str(e)}

        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id}

    @app.get("/api/result")
    def result(view: str = Query(...), what: str = Query("mask")):
        cam = camera_or_404(view)
        if cam is None:
            return JSONResponse(status_code=404,
                                content={"error": f"unknown view {view!r}"})
        if what == "stats":
            entry = state.result.get(view)
            stats = {
                "status": state.job["status"],
                "job_id": state.job["id"],
                "error": state.job.get("error"),
                "version": state.version,
            }
            if entry is not None and "iou" in entry:
                stats["iou"] = entry["iou"]
            return stats
        if state.job["status"] == "running":
            return JSONResponse(status_code=409,
                                content={"error": "job running"})
        entry = state.result.get(view)
        if entry is None:
            return JSONResponse(status_code=404,
                                content={"error": "no result for this view"})
        return Response(_png_bytes(entry["mask"].astype(float)),
                        media_type="image/png")

    @app.post("/api/reset")
    def reset():
        with state.lock:
            state.strokes = {}
            state.result = {}
            state.job = {"status": "idle", "id": state.job["id"]}
            state.version += 1
        return {"version": state.version}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
