"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from thermoseg.geometry import BBox, Polygon, mask_to_bbox, mask_to_rle
from thermoseg.manifest import (
    Annotation,
    CategoryTable,
    DatasetManifest,
    ImageRecord,
)
from thermoseg.synthgen import SceneSpec, generate_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rect_annotation(
    ann_id: int,
    image_id: int,
    category_id: int,
    x: int,
    y: int,
    w: int,
    h: int,
) -> Annotation:
    """Integer-aligned rectangle annotation with exact bbox and area."""
    polygon = Polygon(
        np.array([[x, y], [x + w, y], [x + w, y + h], [x, y + h]], dtype=np.float64)
    )
    return Annotation(
        annotation_id=ann_id,
        image_id=image_id,
        category_id=category_id,
        segmentation=[polygon],
        bbox=BBox(float(x), float(y), float(w), float(h)),
        area=float(w * h),
    )


def small_manifest(split_tag: str = "train") -> DatasetManifest:
    """Two images, three annotations, default categories."""
    images = [
        ImageRecord(1, "img_1.png", 64, 64),
        ImageRecord(2, "img_2.png", 64, 48),
    ]
    annotations = [
        rect_annotation(1, 1, 1, 4, 4, 10, 12),
        rect_annotation(2, 1, 4, 30, 10, 8, 8),
        rect_annotation(3, 2, 2, 10, 6, 6, 14),
    ]
    return DatasetManifest(images, annotations, CategoryTable.default(), split_tag)


def random_blob_mask(rng: np.random.Generator, height: int, width: int) -> np.ndarray:
    """Non-empty random blob: a few overlapping filled rectangles."""
    mask = np.zeros((height, width), dtype=bool)
    for _ in range(int(rng.integers(1, 4))):
        w = int(rng.integers(2, max(3, width // 2)))
        h = int(rng.integers(2, max(3, height // 2)))
        x = int(rng.integers(0, width - w + 1))
        y = int(rng.integers(0, height - h + 1))
        mask[y : y + h, x : x + w] = True
    return mask


def mask_annotation(ann_id: int, image_id: int, category_id: int, mask: np.ndarray) -> Annotation:
    return Annotation(
        annotation_id=ann_id,
        image_id=image_id,
        category_id=category_id,
        segmentation=mask_to_rle(mask),
        bbox=mask_to_bbox(mask),
        area=float(mask.sum()),
    )


@pytest.fixture
def scene_dataset(tmp_path):
    """Small on-disk synthetic dataset (train + test) and its spec."""
    spec = SceneSpec(width=160, height=160, seed=21)
    train = generate_dataset(spec, 10, seed=300, split_tag="train", out_dir=tmp_path / "train")
    test = generate_dataset(spec, 4, seed=800, split_tag="test", out_dir=tmp_path / "test")
    return spec, train, test
