"""HTTP service exposing a frozen bank and model to clients.

All endpoints are read-only over the artifacts; rendered images are cached
content-addressed under ``<root>/served`` so identical requests return
byte-identical payloads. The wire field names are frozen in
``schemas/service_wire.json`` at the repository root.
"""

from __future__ import annotations

import hashlib
import json
import threading
import time
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, UploadFile
from fastapi.responses import FileResponse, Response
from pydantic import BaseModel, Field

from .bank import load_bank
from .config import config_hash, load_config
from .data import load_latent_png, save_latent_png
from .denoiser import load_model
from .editing import EditSet, EditSpec, edit_real, interpolation_strip, sample_edited
from .evaluation import diversity_report
from .manifest import file_sha256
from .schedule import LatentState, make_schedule

STRIP_SCALES = (-2.0, -1.0, 0.0, 1.0, 2.0)
UPLOAD_TTL_S = 3600.0


class EditSpecWire(BaseModel):
    direction_id: int
    scale: float
    window: Optional[tuple[float, float]] = None  # (hi, lo) fractions of T


class SourceWire(BaseModel):
    seed: Optional[int] = None
    image_id: Optional[str] = None


class EditRequest(BaseModel):
    source: SourceWire
    edits: list[EditSpecWire] = Field(default_factory=list)
    return_metrics: bool = False


class ServiceState:
    def __init__(self, root: Path):
        self.root = Path(root)
        self.reloading = False
        self._reload_lock = threading.Lock()
        self.served = self.root / "served"
        self.uploads = self.served / "uploads"
        self.served.mkdir(parents=True, exist_ok=True)
        self.uploads.mkdir(parents=True, exist_ok=True)
        self._load()

    def _load(self):
        self.config = load_config(self.root / "config.yaml" if (self.root / "config.yaml").exists() else None)
        self.config_hash = config_hash(self.config)
        self.model = load_model(self.root / "model.bin")
        self.bank = load_bank(self.root / "bank.bin")
        if not self.bank.frozen:
            self.bank.freeze()
        self.model.attach_bank(self.bank)
        sc = self.config.schedule
        self.schedule = make_schedule(sc.T, sc.beta_start, sc.beta_end, sc.kind, sc.deterministic)
        self.model_sha = file_sha256(self.root / "model.bin")
        self.bank_sha = file_sha256(self.root / "bank.bin")
        self.self_consistency = self._consistency_scores()

    def _consistency_scores(self) -> list[float]:
        images, _ = self._sample_images(4)
        report = diversity_report(self.bank, self.model, images, t_grid=[self.schedule.T // 2], seed=0)
        return [float(v) for v in report.self_consistency]

    def _sample_images(self, n: int):
        latents = []
        for seed in range(n):
            latents.append(sample_edited(self.model, self.schedule, seed, eval_steps=min(16, self.schedule.T)).x)
        return torch.stack(latents), None

    def reload(self):
        with self._reload_lock:
            self.reloading = True
            try:
                self._load()
            finally:
                self.reloading = False

    def guard(self):
        if self.reloading:
            raise HTTPException(status_code=503, detail="artifacts reloading, retry shortly")

    # -- rendering ---------------------------------------------------------

    def edit_specs(self, wires: list[EditSpecWire]) -> list[EditSpec]:
        specs = []
        for w in wires:
            if not 0 <= w.direction_id < self.bank.K:
                raise HTTPException(status_code=404, detail=f"unknown direction_id {w.direction_id}")
            window = tuple(w.window) if w.window is not None else (1.0, 0.0)
            try:
                specs.append(EditSpec(w.direction_id, w.scale, window))
            except ValueError as exc:
                raise HTTPException(status_code=422, detail=str(exc))
        return specs

    def render_edit(self, request: EditRequest) -> dict:
        src = request.source
        if (src.seed is None) == (src.image_id is None):
            raise HTTPException(status_code=422, detail="source needs exactly one of seed or image_id")
        specs = self.edit_specs(request.edits)
        eval_steps = (
            self.config.edit.invert_steps if src.image_id is not None else self.config.edit.eval_steps
        )
        sidecar = {
            "config_hash": self.config_hash,
            "edits": [
                {"direction": s.direction, "scale": s.scale, "window": list(s.window)} for s in specs
            ],
            "eval_steps": eval_steps,
            "guidance_scale": self.config.edit.guidance_scale,
            "schedule": self.model.schedule_params,
            "seed": src.seed,
            "source_image_id": src.image_id,
        }
        image_id = "edit-" + hashlib.sha256(json.dumps(sidecar, sort_keys=True).encode()).hexdigest()[:24]
        png = self.served / f"{image_id}.png"
        if not png.exists():
            if src.image_id is not None:
                upload = self.uploads / f"{src.image_id}.png"
                if not upload.exists():
                    raise HTTPException(status_code=404, detail=f"unknown image_id {src.image_id}")
                latent = load_latent_png(upload, tuple(self.config.latent_shape))
                state = edit_real(
                    self.model, self.schedule, LatentState(latent, 0), EditSet(specs), eval_steps
                )
            else:
                state = sample_edited(
                    self.model, self.schedule, int(src.seed),
                    guidance_scale=self.config.edit.guidance_scale,
                    edit_set=EditSet(specs), eval_steps=self.config.edit.eval_steps,
                )
            save_latent_png(state.x, png)
        response = {
            "image_id": image_id,
            "image_url": f"/images/{image_id}",
            "sidecar": sidecar,
            "metrics": None,
        }
        if request.return_metrics:
            response["metrics"] = {"edit_count": len(specs)}
        return response

    def render_strip(self, direction: int, scale_index: int) -> Path:
        image_id = f"strip-d{direction}-s{scale_index}"
        png = self.served / f"{image_id}.png"
        if not png.exists():
            strip = interpolation_strip(
                self.model, self.schedule, 0, direction, list(STRIP_SCALES),
                window=self.config.edit.fine_window,
                guidance_scale=self.config.edit.guidance_scale,
                eval_steps=self.config.edit.eval_steps,
            )
            for i, state in enumerate(strip):
                save_latent_png(state.x, self.served / f"strip-d{direction}-s{i}.png")
        return png

    def summary(self, k: int, with_strips: bool) -> dict:
        urls = [f"/images/strip-d{k}-s{i}" for i in range(len(STRIP_SCALES))] if with_strips else []
        return {
            "id": k,
            "label": self.bank.labels.get(k),
            "self_consistency": self.self_consistency[k],
            "strip_scales": list(STRIP_SCALES),
            "strip_urls": urls,
        }

    def evict_stale_uploads(self):
        now = time.time()
        for p in self.uploads.glob("*.png"):
            if now - p.stat().st_mtime > UPLOAD_TTL_S:
                p.unlink(missing_ok=True)


def build_app(root: str | Path) -> FastAPI:
    state = ServiceState(Path(root))
    app = FastAPI(title="noisedirs service", version="1")
    app.state.service = state

    @app.get("/health")
    def health():
        return {
            "status": "ok",
            "bank_sha256": state.bank_sha,
            "model_sha256": state.model_sha,
            "config_hash": state.config_hash,
            "directions": state.bank.K,
        }

    @app.get("/directions")
    def directions():
        state.guard()
        return {"directions": [state.summary(k, with_strips=False) for k in range(state.bank.K)]}

    @app.get("/directions/{direction_id}")
    def direction_detail(direction_id: int):
        state.guard()
        if not 0 <= direction_id < state.bank.K:
            raise HTTPException(status_code=404, detail=f"unknown direction_id {direction_id}")
        state.render_strip(direction_id, 0)
        return state.summary(direction_id, with_strips=True)

    @app.post("/edits")
    def edits(request: EditRequest):
        state.guard()
        return state.render_edit(request)

    @app.post("/uploads")
    async def uploads(file: UploadFile):
        state.guard()
        payload = await file.read()
        image_id = "up-" + hashlib.sha256(payload).hexdigest()[:24]
        raw = state.uploads / f"{image_id}.raw"
        raw.write_bytes(payload)
        try:
            latent = load_latent_png(raw, tuple(state.config.latent_shape))
        except Exception as exc:
            raw.unlink(missing_ok=True)
            raise HTTPException(status_code=422, detail=f"undecodable image: {exc}")
        finally:
            raw.unlink(missing_ok=True)
        save_latent_png(latent, state.uploads / f"{image_id}.png")
        state.evict_stale_uploads()
        return {"image_id": image_id}

    @app.get("/images/{image_id}")
    def images(image_id: str):
        state.guard()
        if not image_id.replace("-", "").replace("_", "").isalnum():
            raise HTTPException(status_code=422, detail="malformed image_id")
        for candidate in (state.served / f"{image_id}.png", state.uploads / f"{image_id}.png"):
            if candidate.exists():
                return FileResponse(candidate, media_type="image/png")
        if image_id.startswith("strip-d"):
            try:
                body = image_id[len("strip-d"):]
                direction, scale_index = body.split("-s")
                state.render_strip(int(direction), int(scale_index))
                return FileResponse(state.served / f"{image_id}.png", media_type="image/png")
            except (ValueError, HTTPException):
                pass
        raise HTTPException(status_code=404, detail=f"unknown image {image_id}")

    @app.get("/manifest")
    def manifest():
        latest = sorted((state.root / "manifests").glob("*-latest.json")) if (state.root / "manifests").exists() else []
        return {"manifests": {p.stem: json.loads(p.read_text()) for p in latest}}

    @app.post("/reload")
    def reload():
        state.reload()
        return {"status": "reloaded", "bank_sha256": state.bank_sha, "model_sha256": state.model_sha}

    frontend = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    if frontend.exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=frontend, html=True), name="ui")

    return app
