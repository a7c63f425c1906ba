"""Instance predictions: the output contract of every model backend."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import BBox, RLEMask, mask_to_rle, rle_to_mask


@dataclass(eq=False)
class InstancePrediction:
    """One predicted instance: category, confidence, box, binary mask.

    Geometry lives in the frame of the image the prediction was made on;
    use TransformMeta to map between model-input and source frames.
    """

    image_id: int | None
    category_id: int
    score: float
    bbox: BBox
    mask: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (0.0 <= self.score <= 1.0):
            raise ValueError(f"score must be in [0, 1], got {self.score}")

    def to_coco(self) -> dict:
        out = {
            "image_id": self.image_id,
            "category_id": self.category_id,
            "score": float(self.score),
            "bbox": self.bbox.to_list(),
        }
        if self.mask is not None:
            out["segmentation"] = mask_to_rle(self.mask).to_coco()
        return out

    @classmethod
    def from_coco(cls, obj: dict) -> "InstancePrediction":
        mask = None
        if "segmentation" in obj:
            mask = rle_to_mask(RLEMask.from_coco(obj["segmentation"]))
        return cls(
            image_id=obj.get("image_id"),
            category_id=int(obj["category_id"]),
            score=float(obj["score"]),
            bbox=BBox.from_list(obj["bbox"]),
            mask=mask,
        )


def save_predictions(predictions: list[InstancePrediction], path: Path) -> None:
    Path(path).write_text(json.dumps([p.to_coco() for p in predictions]))


def load_predictions(path: Path) -> list[InstancePrediction]:
    doc = json.loads(Path(path).read_text())
    if not isinstance(doc, list):
        raise ValueError("predictions file must hold a JSON list")
    return [InstancePrediction.from_coco(obj) for obj in doc]
