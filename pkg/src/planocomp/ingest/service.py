"""HTTP ingestion: accept shelf images, queue them, and serve compliance reports.

The job and report endpoints are plumbing around the pipeline: an upload is
stored by content hash, split into racks, and each rack is searched and
aligned against its reference planogram by a pool of worker threads.
"""

from __future__ import annotations

import hashlib
import io
import logging
import queue
import threading
from contextlib import asynccontextmanager
from datetime import datetime, timezone
from fractions import Fraction
from pathlib import Path
from typing import Callable

import numpy as np
from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.responses import JSONResponse
from PIL import Image

from planocomp.align import AlignmentResult
from planocomp.config import DeviceConfig, PipelineConfig, StoreConfig
from planocomp.ingest.imaging import pad_for_detector, split_racks
from planocomp.ingest.store import ObjectStore, ReportLog
from planocomp.providers import DetectorProvider, FeatureProvider
from planocomp.search import run_search

log = logging.getLogger(__name__)


class QueueFull(RuntimeError):
    pass


def decode_image(data: bytes) -> np.ndarray:
    """Fully decode an uploaded image to an RGB array; raises ValueError on bad data."""
    try:
        with Image.open(io.BytesIO(data)) as im:
            im.load()
            return np.asarray(im.convert("RGB"))
    except Exception as e:  # Pillow raises several unrelated types for corrupt input
        raise ValueError(f"cannot decode image: {e}") from e


def job_id_for(device_id: str, digest: str) -> str:
    return hashlib.sha256(f"{device_id}\n{digest}".encode()).hexdigest()[:24]


def _matched_required(result: AlignmentResult) -> tuple[int, int]:
    matched = required = 0
    for r, d in result.positions:
        if r.label == d.label:
            matched += min(r.quantity, d.quantity)
        required += r.quantity
    return matched, required


def analyze_shelf(
    image: np.ndarray,
    digest: str,
    device: DeviceConfig,
    store: StoreConfig,
    config: PipelineConfig,
    detector: DetectorProvider,
    features: FeatureProvider,
) -> dict:
    """Split a shelf image into racks and run the compliance search on each."""
    racks = split_racks(image, device.rack_count, key=digest)
    out = []
    matched = required = 0
    for i, (rack, ref) in enumerate(zip(racks, device.references)):
        _, transform = pad_for_detector(rack.pixels, blur_size=config.change.blur_size, blur_sigma=config.change.blur_sigma)
        outcome = run_search(rack, ref, store.catalog, detector, features, config.search)
        m, r = _matched_required(outcome.result)
        matched, required = matched + m, required + r
        out.append(
            {
                "index": i,
                "key": rack.key,
                "source_rows": list(rack.source_rows),
                "width": rack.width,
                "height": rack.height,
                "letterbox": {"scale": transform.scale, "offset_x": transform.offset_x, "offset_y": transform.offset_y},
                "mu": float(outcome.mu),
                "mu_exact": f"{outcome.mu.numerator}/{outcome.mu.denominator}",
                "iterations": outcome.iterations,
                "alignment": outcome.result.to_dict(),
                "detections": [d.to_dict() for d in outcome.detections],
                "trace": [t.to_dict() for t in outcome.trace],
            }
        )
    mu = Fraction(matched, required) if required else Fraction(1)
    return {
        "image_digest": digest,
        "image_width": int(image.shape[1]),
        "image_height": int(image.shape[0]),
        "mu": float(mu),
        "mu_exact": f"{mu.numerator}/{mu.denominator}",
        "racks": out,
    }


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


class JobManager:
    """Bounded job queue drained by worker threads; state is persisted to a :class:`ReportLog`.

    Jobs found queued or running in the log at start-up are processed again.
    """

    def __init__(
        self,
        objects: ObjectStore,
        reports: ReportLog,
        process: Callable[[dict], dict],
        queue_size: int = 64,
        workers: int = 2,
    ):
        self.objects = objects
        self.reports = reports
        self.process = process
        self.workers = workers
        self._queue: queue.Queue[str | None] = queue.Queue(maxsize=queue_size)
        self._lock = threading.Lock()
        self._jobs: dict[str, dict] = self.reports.latest()
        self._threads: list[threading.Thread] = []

    @property
    def depth(self) -> int:
        return self._queue.qsize()

    def get(self, job_id: str) -> dict | None:
        with self._lock:
            rec = self._jobs.get(job_id)
            return dict(rec) if rec is not None else None

    def _record(self, rec: dict) -> None:
        # caller holds the lock
        self._jobs[rec["job_id"]] = rec
        self.reports.append(rec)

    def submit(self, job_id: str, device_id: str, digest: str) -> tuple[dict, bool]:
        """Queue a job unless it already exists; returns the job record and a duplicate flag."""
        with self._lock:
            existing = self._jobs.get(job_id)
            if existing is not None:
                return dict(existing), True
            try:
                self._queue.put_nowait(job_id)
            except queue.Full:
                raise QueueFull("processing queue is full") from None
            rec = {
                "job_id": job_id,
                "device_id": device_id,
                "image_digest": digest,
                "status": "queued",
                "received_at": _now(),
            }
            self._record(rec)
            return dict(rec), False

    def start(self) -> None:
        if self._threads:
            return
        for i in range(self.workers):
            t = threading.Thread(target=self._run, name=f"planocomp-worker-{i}", daemon=True)
            t.start()
            self._threads.append(t)
        with self._lock:
            pending = [j for j, r in self._jobs.items() if r["status"] in ("queued", "running")]
        for job_id in pending:
            self._queue.put(job_id)

    def stop(self, timeout: float | None = 10.0) -> None:
        for _ in self._threads:
            self._queue.put(None)
        for t in self._threads:
            t.join(timeout)
        self._threads.clear()

    def join(self) -> None:
        """Block until every queued job has been processed."""
        self._queue.join()

    def _run(self) -> None:
        while True:
            job_id = self._queue.get()
            try:
                if job_id is None:
                    return
                self._handle(job_id)
            finally:
                self._queue.task_done()

    def _handle(self, job_id: str) -> None:
        with self._lock:
            base = {k: v for k, v in self._jobs[job_id].items() if k not in ("report", "error")}
            self._record({**base, "status": "running", "started_at": _now()})
        try:
            report = self.process(base)
            final = {**base, "status": "done", "finished_at": _now(), "report": report}
        except Exception as e:
            log.exception("job %s failed", job_id)
            final = {**base, "status": "failed", "finished_at": _now(), "error": str(e)}
        with self._lock:
            self._record(final)


def create_app(
    storage_root: str | Path,
    store: StoreConfig,
    config: PipelineConfig = PipelineConfig(),
    detector: DetectorProvider | None = None,
    features: FeatureProvider | None = None,
) -> FastAPI:
    """Build the upload service. Providers default to those named in ``config``."""
    if detector is None or features is None:
        d, f = config.providers.build()
        detector = detector or d
        features = features or f
    root = Path(storage_root)
    objects = ObjectStore(root)
    reports = ReportLog(root)

    def process(job: dict) -> dict:
        device = store.devices[job["device_id"]]
        image = decode_image(objects.get(job["image_digest"]))
        return analyze_shelf(image, job["image_digest"], device, store, config, detector, features)

    jobs = JobManager(objects, reports, process, config.service.queue_size, config.service.workers)

    @asynccontextmanager
    async def lifespan(_: FastAPI):
        jobs.start()
        try:
            yield
        finally:
            jobs.stop()

    app = FastAPI(title="planocomp ingest", lifespan=lifespan)
    app.state.jobs = jobs
    app.state.objects = objects

    def authorize(token: str | None) -> None:
        if token != store.token:
            raise HTTPException(401, "missing or invalid token")

    @app.post("/v1/shelf-image", status_code=202)
    async def upload(
        request: Request,
        x_device_id: str | None = Header(default=None),
        x_auth_token: str | None = Header(default=None),
    ):
        authorize(x_auth_token)
        device = store.devices.get(x_device_id or "")
        if device is None:
            raise HTTPException(403, f"unknown device {x_device_id!r}")
        body = await request.body()
        if not body:
            raise HTTPException(422, "empty body")
        try:
            image = decode_image(body)
        except ValueError as e:
            raise HTTPException(422, str(e)) from None
        if device.rack_count > image.shape[0]:
            raise HTTPException(422, f"image height {image.shape[0]} is below the rack count {device.rack_count}")
        digest, _ = objects.put(body)
        job_id = job_id_for(device.device_id, digest)
        try:
            rec, duplicate = jobs.submit(job_id, device.device_id, digest)
        except QueueFull as e:
            raise HTTPException(503, str(e)) from None
        return JSONResponse(
            {"job_id": job_id, "image_digest": digest, "duplicate": duplicate, "status": rec["status"]},
            status_code=202,
        )

    @app.get("/v1/report/{job_id}")
    def report(job_id: str, x_auth_token: str | None = Header(default=None)):
        authorize(x_auth_token)
        rec = jobs.get(job_id)
        if rec is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return rec

    @app.get("/v1/health")
    def health():
        return {"status": "ok", "queue_depth": jobs.depth, "workers": jobs.workers, "devices": len(store.devices)}

    return app
