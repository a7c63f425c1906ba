"""Inference and artifact generation for one survey job."""

from __future__ import annotations

import numpy as np

from ..backend import SegmentationModel
from ..geometry import BBox, RLEMask, mask_to_rle, rle_to_mask
from ..manifest import HEAT_LOSS, CategoryTable
from ..postprocess import (
    LocalMedianFill,
    crop_heat_loss,
    export_thermal_summary,
    remove_obstructive,
)
from ..predictions import InstancePrediction
from ..resize import resize_record


def run_inference(
    image: np.ndarray,
    model: SegmentationModel,
    score_threshold: float,
    input_size: int = 512,
) -> list[InstancePrediction]:
    """Letterbox, predict in the model frame, map results back to source."""
    resized, _, meta = resize_record(image, [], target=input_size)
    h, w = image.shape[:2]
    out: list[InstancePrediction] = []
    for p in model.predict(resized, score_threshold=score_threshold):
        try:
            bbox = meta.box_to_source(p.bbox).clipped(w, h)
        except Exception:
            continue
        mask = meta.mask_to_source(p.mask) if p.mask is not None else None
        if mask is not None and not mask.any():
            continue
        out.append(
            InstancePrediction(
                image_id=p.image_id,
                category_id=p.category_id,
                score=p.score,
                bbox=bbox,
                mask=mask,
            )
        )
    out.sort(key=lambda p: -p.score)
    return out


def build_payload(
    image: np.ndarray,
    predictions: list[InstancePrediction],
    categories: CategoryTable,
    model_id: str,
    score_threshold: float,
    accepted: list[bool] | None = None,
    fill_window: int = 11,
    crop_padding: int = 8,
) -> tuple[dict, np.ndarray, list[np.ndarray]]:
    """Assemble the result payload plus artifact pixel buffers.

    Deterministic in (image, predictions, accepted): review regeneration
    re-runs this from the persisted masks, never the model.
    """
    if accepted is None:
        accepted = [True] * len(predictions)
    if len(accepted) != len(predictions):
        raise ValueError("accepted flags must cover every prediction")

    kept = [p for p, ok in zip(predictions, accepted) if ok]
    heat_loss = [p for p in kept if categories.role_of(p.category_id) == HEAT_LOSS]
    obstructive = [p for p in kept if categories.role_of(p.category_id) != HEAT_LOSS]

    crop_set = crop_heat_loss(image, heat_loss, categories, padding=crop_padding)
    cleaned = remove_obstructive(
        image, obstructive, categories, fill=LocalMedianFill(k=fill_window)
    )

    pred_index = {id(p): i for i, p in enumerate(predictions)}
    predictions_doc = []
    for i, (p, ok) in enumerate(zip(predictions, accepted)):
        cat = categories.by_id(p.category_id)
        predictions_doc.append(
            {
                "index": i,
                "category_id": p.category_id,
                "category": cat.name,
                "role": cat.role,
                "score": float(p.score),
                "bbox": p.bbox.to_list(),
                "mask": mask_to_rle(p.mask).to_coco() if p.mask is not None else None,
                "accepted": bool(ok),
            }
        )
    crops_doc = []
    for i, (crop, p) in enumerate(zip(crop_set.crops, heat_loss)):
        summary = export_thermal_summary(crop)
        crops_doc.append(
            {
                "index": i,
                "prediction_index": pred_index[id(p)],
                "category": crop.category,
                "region": crop.region.to_list(),
                "requested_padding": crop.requested_padding,
                "file": f"crops/crop_{i:03d}.png",
                "summary": summary.to_dict(),
            }
        )
    payload = {
        "model_id": model_id,
        "score_threshold": score_threshold,
        "predictions": predictions_doc,
        "crops": crops_doc,
        "cleaned": "cleaned.png",
        "fill": {"kind": "local_median", "k": fill_window},
    }
    return payload, cleaned.pixels, [c.pixels for c in crop_set.crops]


def predictions_from_payload(payload: dict) -> list[InstancePrediction]:
    """Rebuild prediction objects from a persisted payload."""
    out = []
    for doc in payload["predictions"]:
        mask = rle_to_mask(RLEMask.from_coco(doc["mask"])) if doc.get("mask") else None
        out.append(
            InstancePrediction(
                image_id=None,
                category_id=int(doc["category_id"]),
                score=float(doc["score"]),
                bbox=BBox.from_list(doc["bbox"]),
                mask=mask,
            )
        )
    return out
