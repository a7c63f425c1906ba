"""Builders for survey-scale manifests with exact per-class instance counts."""

from __future__ import annotations

import json
import math

from thermoseg.manifest import (
    CategoryTable,
    DatasetManifest,
    ImageRecord,
    manifest_to_coco,
)

from conftest import rect_annotation

# Reference per-class instance counts for the three survey splits.
REFERENCE_SPLIT_COUNTS: dict[str, dict[str, int]] = {
    "train": {
        "window": 807, "door": 278, "fence": 61, "tree": 85,
        "bin": 116, "road": 111, "other": 851,
    },
    "test": {
        "window": 89, "door": 31, "fence": 7, "tree": 9,
        "bin": 13, "road": 12, "other": 94,
    },
    "evaluation": {
        "window": 99, "door": 34, "fence": 8, "tree": 10,
        "bin": 14, "road": 13, "other": 105,
    },
}

_GRID = 6  # annotations per image row/col grid
_CELL = 10
_CANVAS = _GRID * _CELL


def survey_shaped_manifest(split: str) -> DatasetManifest:
    """Manifest whose per-class counts equal the reference split exactly.

    Annotations are placed round-robin across images on a grid of small
    rectangles, so every geometric invariant holds by construction.
    """
    counts = REFERENCE_SPLIT_COUNTS[split]
    categories = CategoryTable.default()
    total = sum(counts.values())
    per_image = _GRID * _GRID
    n_images = math.ceil(total / per_image)
    images = [
        ImageRecord(i + 1, f"{split}_{i + 1:04d}.png", _CANVAS, _CANVAS)
        for i in range(n_images)
    ]
    # interleave classes so every image carries a class mix
    labels: list[int] = []
    remaining = {name: n for name, n in counts.items()}
    while any(remaining.values()):
        for name in counts:
            if remaining[name] > 0:
                labels.append(categories.by_name(name).category_id)
                remaining[name] -= 1

    annotations = []
    for idx, category_id in enumerate(labels):
        image_id = idx % n_images + 1
        slot = idx // n_images
        gx = slot % _GRID
        gy = slot // _GRID
        annotations.append(
            rect_annotation(
                idx + 1, image_id, category_id,
                x=gx * _CELL + 1, y=gy * _CELL + 1, w=_CELL - 2, h=_CELL - 2,
            )
        )
    split_tag = split if split in ("train", "test", "evaluation") else "train"
    return DatasetManifest(images, annotations, categories, split_tag)


def survey_shaped_document(split: str) -> bytes:
    return json.dumps(manifest_to_coco(survey_shaped_manifest(split))).encode()
