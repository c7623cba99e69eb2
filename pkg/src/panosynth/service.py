"""HTTP inference service consumed by the browser artboard.

Endpoints:
  GET  /healthz     liveness probe
  GET  /categories  taxonomy JSON
  POST /layout      fast path: layout preview + coverage + predicted boxes
  POST /synthesize  full synthesis: adds the generated image

Scene validation failures return 400 with the error class name in the
body; a request carrying a mismatched taxonomy hash returns 409. Responses
are pure functions of (checkpoint, request payload), including the latent
seed, so replays are byte-identical.
"""

from __future__ import annotations

import threading
import time
from typing import Any

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .errors import PanosynthError
from .metrics import coverage
from .pipeline import SceneLayouts, SynthesisModel
from .render import image_to_png_bytes, layout_preview, png_base64
from .scene import Scene, perturb_scene


class ObjectIn(BaseModel):
    category: int
    cx: float
    cy: float
    size: int


class CanvasIn(BaseModel):
    h: int
    w: int


class SceneRequest(BaseModel):
    canvas: CanvasIn
    objects: list[ObjectIn]
    latent_seed: int = 0
    want_layout: bool = True
    want_image: bool = True
    taxonomy_hash: str | None = None


def _to_scene(req: SceneRequest) -> Scene:
    return Scene.from_json(
        {
            "canvas": {"h": req.canvas.h, "w": req.canvas.w},
            "objects": [o.model_dump() for o in req.objects],
        }
    )


def _boxes_payload(layouts: SceneLayouts) -> list[dict[str, Any]]:
    return [
        {
            "index": i,
            "category": layouts.instances.categories[i]
            if layouts.instances.categories
            else None,
            "cx": b.cx,
            "cy": b.cy,
            "h": b.h,
            "w": b.w,
        }
        for i, b in enumerate(layouts.instances.bboxes)
    ]


def create_app(model: SynthesisModel, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="panosynth")
    synth_lock = threading.Lock()  # one in-flight synthesis per worker

    @app.exception_handler(PanosynthError)
    async def _domain_error(request: Request, exc: PanosynthError):
        status = 409 if exc.code == "CheckpointMismatch" else 400
        return JSONResponse(
            status_code=status, content={"error": exc.code, "detail": str(exc)}
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/categories")
    def categories():
        payload = model.taxonomy.to_json()
        payload["taxonomy_hash"] = model.taxonomy.content_hash()
        payload["size_max"] = model.layout_config.size_max
        return payload

    def _check_taxonomy(req: SceneRequest):
        if req.taxonomy_hash and req.taxonomy_hash != model.taxonomy.content_hash():
            return JSONResponse(
                status_code=409,
                content={"error": "TaxonomyMismatch",
                         "detail": "request taxonomy hash does not match checkpoint"},
            )
        return None

    def _layouts(req: SceneRequest, perturb_range: float, perturb_seed: int):
        scene = _to_scene(req)
        if perturb_range:
            scene = perturb_scene(scene, perturb_range, perturb_seed)
        vscene = model.validate(scene)
        layouts = model.layouts_for_scene(vscene, seed=req.latent_seed)
        return scene, layouts

    @app.post("/layout")
    def layout(req: SceneRequest, perturb_range: float = 0.0, perturb_seed: int = 0):
        mismatch = _check_taxonomy(req)
        if mismatch:
            return mismatch
        t0 = time.perf_counter()
        _, layouts = _layouts(req, perturb_range, perturb_seed)
        cov = coverage(layouts.stuff, layouts.instances, model.generator_config.tau)
        preview = layout_preview(layouts, model.taxonomy, model.generator_config.tau)
        png = image_to_png_bytes(preview.astype(float) / 127.5 - 1.0)
        return {
            "layout_png": png_base64(png),
            "coverage": cov,
            "boxes": _boxes_payload(layouts),
            "timing_ms": (time.perf_counter() - t0) * 1000.0,
        }

    @app.post("/synthesize")
    def synthesize(req: SceneRequest, perturb_range: float = 0.0, perturb_seed: int = 0):
        mismatch = _check_taxonomy(req)
        if mismatch:
            return mismatch
        t0 = time.perf_counter()
        scene = _to_scene(req)
        if perturb_range:
            scene = perturb_scene(scene, perturb_range, perturb_seed)
        vscene = model.validate(scene)
        with synth_lock:
            image, layouts = model.synthesize(vscene, seed=req.latent_seed)
        cov = coverage(layouts.stuff, layouts.instances, model.generator_config.tau)
        body: dict[str, Any] = {
            "coverage": cov,
            "boxes": _boxes_payload(layouts),
        }
        if req.want_image:
            body["image_png"] = png_base64(image_to_png_bytes(image))
        if req.want_layout:
            preview = layout_preview(layouts, model.taxonomy, model.generator_config.tau)
            body["layout_png"] = png_base64(
                image_to_png_bytes(preview.astype(float) / 127.5 - 1.0)
            )
        body["timing_ms"] = (time.perf_counter() - t0) * 1000.0
        return body

    if static_dir:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")

    return app
