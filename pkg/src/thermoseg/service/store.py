"""Filesystem-backed job store.

One directory per job holding the canonical grayscale input, the job
record, and (once done) the result payload plus artifact files.  No
external database: everything is inspectable with a file browser and
survives process restarts.
"""

from __future__ import annotations

import json
import threading
import uuid
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import cv2
import numpy as np

QUEUED = "queued"
RUNNING = "running"
DONE = "done"
FAILED = "failed"

_TRANSITIONS = {
    QUEUED: {RUNNING},
    RUNNING: {DONE, FAILED},
    DONE: set(),
    FAILED: set(),
}


class UnknownJobError(KeyError):
    pass


@dataclass
class JobRecord:
    job_id: str
    status: str
    submitted_at: str
    input_ref: str
    model_id: str
    score_threshold: float
    result_ref: str | None = None
    error: str | None = None
    finished_at: str | None = None

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "status": self.status,
            "submitted_at": self.submitted_at,
            "input_ref": self.input_ref,
            "model_id": self.model_id,
            "score_threshold": self.score_threshold,
            "result_ref": self.result_ref,
            "error": self.error,
            "finished_at": self.finished_at,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "JobRecord":
        return cls(**{k: obj.get(k) for k in cls("", "", "", "", "", 0.0).to_dict()})


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class JobStore:
    def __init__(self, root: Path):
        self.root = Path(root)
        (self.root / "jobs").mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def job_dir(self, job_id: str) -> Path:
        return self.root / "jobs" / job_id

    def create(self, image: np.ndarray, model_id: str, score_threshold: float) -> JobRecord:
        job_id = uuid.uuid4().hex[:12]
        job_dir = self.job_dir(job_id)
        job_dir.mkdir(parents=True)
        cv2.imwrite(str(job_dir / "input.png"), image)
        record = JobRecord(
            job_id=job_id,
            status=QUEUED,
            submitted_at=_utcnow(),
            input_ref="input.png",
            model_id=model_id,
            score_threshold=score_threshold,
        )
        self._write_record(record)
        return record

    def get(self, job_id: str) -> JobRecord:
        path = self.job_dir(job_id) / "record.json"
        if not path.exists():
            raise UnknownJobError(job_id)
        return JobRecord.from_dict(json.loads(path.read_text()))

    def transition(self, job_id: str, status: str, error: str | None = None) -> JobRecord:
        with self._lock:
            record = self.get(job_id)
            if status not in _TRANSITIONS[record.status]:
                raise ValueError(
                    f"job {job_id}: illegal transition {record.status} -> {status}"
                )
            record.status = status
            record.error = error
            if status in (DONE, FAILED):
                record.finished_at = _utcnow()
            if status == DONE:
                record.result_ref = "payload.json"
            self._write_record(record)
            return record

    def load_input(self, job_id: str) -> np.ndarray:
        path = self.job_dir(job_id) / "input.png"
        image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
        if image is None:
            raise UnknownJobError(job_id)
        return image

    def write_payload(
        self,
        job_id: str,
        payload: dict,
        cleaned: np.ndarray,
        crop_images: list[np.ndarray],
    ) -> None:
        job_dir = self.job_dir(job_id)
        cv2.imwrite(str(job_dir / "cleaned.png"), cleaned)
        crops_dir = job_dir / "crops"
        crops_dir.mkdir(exist_ok=True)
        for stale in crops_dir.glob("crop_*.png"):
            stale.unlink()
        for i, pixels in enumerate(crop_images):
            cv2.imwrite(str(crops_dir / f"crop_{i:03d}.png"), pixels)
        tmp = job_dir / "payload.json.tmp"
        tmp.write_text(json.dumps(payload))
        tmp.replace(job_dir / "payload.json")

    def read_payload(self, job_id: str) -> dict | None:
        path = self.job_dir(job_id) / "payload.json"
        if not path.exists():
            return None
        return json.loads(path.read_text())

    def load_cleaned(self, job_id: str) -> Path:
        return self.job_dir(job_id) / "cleaned.png"

    def list_ids(self) -> list[str]:
        """All job ids, oldest submission first (rescans the store)."""
        records = []
        for path in (self.root / "jobs").iterdir():
            record_file = path / "record.json"
            if record_file.exists():
                records.append(JobRecord.from_dict(json.loads(record_file.read_text())))
        records.sort(key=lambda r: (r.submitted_at, r.job_id))
        return [r.job_id for r in records]

    def _write_record(self, record: JobRecord) -> None:
        job_dir = self.job_dir(record.job_id)
        tmp = job_dir / "record.json.tmp"
        tmp.write_text(json.dumps(record.to_dict()))
        tmp.replace(job_dir / "record.json")
