"""FastAPI application wrapping the selected model plus postprocessing.

Uploads enter a FIFO queue drained by worker threads (one by default;
model handles are memory-heavy).  Each job owns one directory in the
store; the review endpoint regenerates artifacts deterministically from
the persisted prediction masks.
"""

from __future__ import annotations

import io
import queue
import threading
import zipfile
from contextlib import asynccontextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, HTTPException, Query, UploadFile
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse, Response

from ..backend import SegmentationModel, StubBackend
from ..harness import ModelRegistry, RegistryEntry, select_best
from .config import ServiceConfig
from .pipeline import build_payload, predictions_from_payload, run_inference
from .store import DONE, FAILED, QUEUED, RUNNING, JobStore, UnknownJobError


class ServiceState:
    def __init__(self, config: ServiceConfig):
        self.config = config
        self.store = JobStore(config.store_dir)
        self.registry = ModelRegistry.load(config.registry_dir)
        self.models: dict[str, SegmentationModel] = {}
        self.queue: "queue.Queue[str]" = queue.Queue()
        self.stop = threading.Event()
        self.workers: list[threading.Thread] = []
        self._model_lock = threading.Lock()

    # -- models --------------------------------------------------------------

    def default_model_id(self) -> str | None:
        if self.config.default_model:
            return self.config.default_model
        if not self.registry.entries:
            return None
        return select_best(self.registry)

    def model(self, model_id: str) -> SegmentationModel:
        with self._model_lock:
            if model_id not in self.models:
                self.models[model_id] = self._load_model(self.registry.get(model_id))
            return self.models[model_id]

    def _load_model(self, entry: RegistryEntry) -> SegmentationModel:
        checkpoint = entry.checkpoint
        ref = Path(checkpoint.weights_ref)
        if not ref.exists():
            candidate = self.config.registry_dir / checkpoint.weights_ref
            if candidate.exists():
                checkpoint = replace(checkpoint, weights_ref=str(candidate))
        if checkpoint.backend_kind == "stub":
            return StubBackend().load_checkpoint(checkpoint, origin=entry.experiment_id)
        if checkpoint.backend_kind == "torchvision":
            from ..torch_backend import TorchvisionBackend

            return TorchvisionBackend().load_checkpoint(checkpoint, origin=entry.experiment_id)
        raise RuntimeError(f"unknown backend kind {checkpoint.backend_kind!r}")

    # -- workers ---------------------------------------------------------------

    def start(self) -> None:
        # jobs interrupted mid-run cannot resume; queued ones are replayed
        for job_id in self.store.list_ids():
            record = self.store.get(job_id)
            if record.status == RUNNING:
                self.store.transition(job_id, FAILED, error="interrupted by restart")
            elif record.status == QUEUED:
                self.queue.put(job_id)
        self.stop.clear()
        for i in range(self.config.worker_count):
            worker = threading.Thread(target=self._worker_loop, name=f"job-worker-{i}", daemon=True)
            worker.start()
            self.workers.append(worker)

    def shutdown(self) -> None:
        self.stop.set()
        for worker in self.workers:
            worker.join(timeout=5.0)
        self.workers.clear()

    def _worker_loop(self) -> None:
        while not self.stop.is_set():
            try:
                job_id = self.queue.get(timeout=0.1)
            except queue.Empty:
                continue
            try:
                self._process(job_id)
            finally:
                self.queue.task_done()

    def _process(self, job_id: str) -> None:
        record = self.store.transition(job_id, RUNNING)
        try:
            image = self.store.load_input(job_id)
            model = self.model(record.model_id)
            predictions = run_inference(
                image, model, record.score_threshold, self.config.input_size
            )
            payload, cleaned, crops = build_payload(
                image,
                predictions,
                model.categories,
                record.model_id,
                record.score_threshold,
                fill_window=self.config.fill_window,
                crop_padding=self.config.crop_padding,
            )
            self.store.write_payload(job_id, payload, cleaned, crops)
            self.store.transition(job_id, DONE)
        except Exception as exc:  # job failures are data, not crashes
            self.store.transition(job_id, FAILED, error=f"{type(exc).__name__}: {exc}")


def _decode_upload(data: bytes) -> np.ndarray:
    from PIL import Image, UnidentifiedImageError

    try:
        with Image.open(io.BytesIO(data)) as img:
            return np.asarray(img.convert("L"))
    except (UnidentifiedImageError, OSError, ValueError) as exc:
        raise HTTPException(status_code=422, detail=f"cannot decode image: {exc}") from exc


def create_app(config: ServiceConfig) -> FastAPI:
    state = ServiceState(config)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        state.start()
        try:
            yield
        finally:
            state.shutdown()

    app = FastAPI(title="thermoseg survey service", lifespan=lifespan)
    app.state.service = state
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    @app.post("/api/v1/jobs")
    async def submit_job(
        image: UploadFile = File(...),
        model: str | None = Query(default=None),
        threshold: float | None = Query(default=None),
    ):
        data = await image.read()
        pixels = _decode_upload(data)
        model_id = model or state.default_model_id()
        if model_id is None or model_id not in state.registry:
            raise HTTPException(status_code=404, detail=f"unknown model {model_id!r}")
        score_threshold = config.score_threshold if threshold is None else threshold
        if not (0.0 <= score_threshold <= 1.0):
            raise HTTPException(status_code=422, detail="threshold must be in [0, 1]")
        record = state.store.create(pixels, model_id, score_threshold)
        state.queue.put(record.job_id)
        return {"job_id": record.job_id, "status": record.status}

    @app.get("/api/v1/jobs/{job_id}")
    def get_job(job_id: str):
        try:
            record = state.store.get(job_id)
        except UnknownJobError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        doc = record.to_dict()
        if record.status == DONE:
            doc["payload"] = state.store.read_payload(job_id)
        return doc

    @app.post("/api/v1/jobs/{job_id}/review")
    def review_job(job_id: str, body: dict):
        try:
            record = state.store.get(job_id)
        except UnknownJobError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        if record.status != DONE:
            raise HTTPException(
                status_code=409, detail=f"job is {record.status}, review needs done"
            )
        payload = state.store.read_payload(job_id)
        decisions = body.get("decisions")
        if not isinstance(decisions, list):
            raise HTTPException(status_code=422, detail="body must carry a decisions list")
        accepted = [p["accepted"] for p in payload["predictions"]]
        for decision in decisions:
            try:
                index = int(decision["prediction_index"])
                accepted[index] = bool(decision["accepted"])
            except (KeyError, TypeError, ValueError, IndexError):
                raise HTTPException(
                    status_code=422, detail=f"bad decision entry: {decision!r}"
                )
        image = state.store.load_input(job_id)
        predictions = predictions_from_payload(payload)
        model = state.model(record.model_id)
        new_payload, cleaned, crops = build_payload(
            image,
            predictions,
            model.categories,
            record.model_id,
            record.score_threshold,
            accepted=accepted,
            fill_window=config.fill_window,
            crop_padding=config.crop_padding,
        )
        state.store.write_payload(job_id, new_payload, cleaned, crops)
        return new_payload

    @app.get("/api/v1/jobs/{job_id}/cleaned")
    def get_cleaned(job_id: str):
        try:
            record = state.store.get(job_id)
        except UnknownJobError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        if record.status != DONE:
            raise HTTPException(status_code=409, detail="job not done")
        return FileResponse(state.store.load_cleaned(job_id), media_type="image/png")

    @app.get("/api/v1/jobs/{job_id}/crops")
    def get_crops(job_id: str):
        try:
            record = state.store.get(job_id)
        except UnknownJobError:
            raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
        if record.status != DONE:
            raise HTTPException(status_code=409, detail="job not done")
        payload = state.store.read_payload(job_id)
        buffer = io.BytesIO()
        with zipfile.ZipFile(buffer, "w", zipfile.ZIP_DEFLATED) as archive:
            for crop in payload["crops"]:
                path = state.store.job_dir(job_id) / crop["file"]
                archive.write(path, arcname=Path(crop["file"]).name)
            archive.writestr("metadata.json", JSONResponse(payload["crops"]).body)
        return Response(content=buffer.getvalue(), media_type="application/zip")

    @app.get("/api/v1/models")
    def list_models():
        default_id = state.default_model_id()
        return [
            {
                "id": e.experiment_id,
                "map_test": e.map_test,
                "map_train": e.map_train,
                "parent": e.checkpoint.parent,
                "backbone": e.checkpoint.backbone.kind,
                "data_volume": e.config.data_volume,
                "augmented": bool(e.config.augmentation and e.config.augmentation.enabled),
                "default": e.experiment_id == default_id,
            }
            for e in state.registry.entries.values()
        ]

    if config.ui_dir is not None and Path(config.ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=config.ui_dir, html=True), name="ui")

    return app
