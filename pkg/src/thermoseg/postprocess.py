"""Turn predictions into surveyor deliverables.

Heat-loss detections become padded crops of the source image; obstructive
detections are erased from a cleaned copy via a configurable fill; crops
get summary statistics of the thermal intensities.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

from .geometry import BBox
from .manifest import HEAT_LOSS, CategoryTable
from .predictions import InstancePrediction


class PostprocessError(ValueError):
    pass


@dataclass(frozen=True)
class ConstantFill:
    value: int = 0


@dataclass(frozen=True)
class LocalMedianFill:
    """Masked pixels take the median of unmasked pixels in a k x k window."""

    k: int = 11

    def __post_init__(self) -> None:
        if self.k < 1 or self.k % 2 == 0:
            raise PostprocessError(f"window size must be odd and positive, got {self.k}")


FillStrategy = Union[ConstantFill, LocalMedianFill]


@dataclass
class Crop:
    category: str
    region: BBox  # clipped crop bounds in the source frame (integer-aligned)
    pixels: np.ndarray
    requested_padding: int
    effective_padding: tuple[int, int, int, int]  # left, top, right, bottom


@dataclass
class CropSet:
    crops: list[Crop]


@dataclass
class Removal:
    category: str
    mask: np.ndarray
    fill: FillStrategy


@dataclass
class CleanedImage:
    pixels: np.ndarray
    removals: list[Removal]


@dataclass
class ThermalSummary:
    category: str
    region: BBox
    min: float
    max: float
    mean: float
    std: float

    def to_dict(self) -> dict:
        return {
            "category": self.category,
            "region": self.region.to_list(),
            "min": self.min,
            "max": self.max,
            "mean": self.mean,
            "std": self.std,
        }


def partition_detections(
    predictions: list[InstancePrediction], categories: CategoryTable
) -> tuple[list[InstancePrediction], list[InstancePrediction]]:
    """Split predictions into (heat-loss, obstructive) by category role."""
    heat_loss: list[InstancePrediction] = []
    obstructive: list[InstancePrediction] = []
    for p in predictions:
        role = categories.role_of(p.category_id)  # raises on unknown ids
        (heat_loss if role == HEAT_LOSS else obstructive).append(p)
    return heat_loss, obstructive


def crop_heat_loss(
    image: np.ndarray,
    heat_loss: list[InstancePrediction],
    categories: CategoryTable,
    padding: int = 8,
) -> CropSet:
    """One padded, clipped crop per heat-loss prediction (source frame)."""
    h, w = image.shape[:2]
    crops: list[Crop] = []
    for p in heat_loss:
        if categories.role_of(p.category_id) != HEAT_LOSS:
            raise PostprocessError(
                f"crop requested for non-heat-loss category "
                f"{categories.by_id(p.category_id).name!r}"
            )
        b = p.bbox
        x0 = max(0, int(math.floor(b.x - padding)))
        y0 = max(0, int(math.floor(b.y - padding)))
        x1 = min(w, int(math.ceil(b.x2 + padding)))
        y1 = min(h, int(math.ceil(b.y2 + padding)))
        if x1 <= x0 or y1 <= y0:
            raise PostprocessError(f"prediction box {b.to_list()} lies outside the image")
        effective = (
            int(math.floor(b.x)) - x0,
            int(math.floor(b.y)) - y0,
            x1 - int(math.ceil(b.x2)),
            y1 - int(math.ceil(b.y2)),
        )
        crops.append(
            Crop(
                category=categories.by_id(p.category_id).name,
                region=BBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0)),
                pixels=image[y0:y1, x0:x1].copy(),
                requested_padding=padding,
                effective_padding=effective,
            )
        )
    return CropSet(crops=crops)


def remove_obstructive(
    image: np.ndarray,
    obstructive: list[InstancePrediction],
    categories: CategoryTable,
    fill: FillStrategy = LocalMedianFill(),
) -> CleanedImage:
    """Erase obstructive predictions; pixels outside their masks are untouched."""
    out = image.copy()
    union = np.zeros(image.shape[:2], dtype=bool)
    removals: list[Removal] = []
    for p in obstructive:
        if p.mask is None:
            raise PostprocessError("obstructive prediction carries no mask")
        if p.mask.shape != image.shape[:2]:
            raise PostprocessError(
                f"mask shape {p.mask.shape} does not match image {image.shape[:2]}"
            )
        union |= p.mask.astype(bool)
        removals.append(
            Removal(category=categories.by_id(p.category_id).name, mask=p.mask, fill=fill)
        )
    if not removals or not union.any():
        return CleanedImage(pixels=out, removals=removals)

    if isinstance(fill, ConstantFill):
        out[union] = fill.value
        return CleanedImage(pixels=out, removals=removals)

    unmasked = ~union
    if not unmasked.any():
        raise PostprocessError("mask covers the whole image; local-median fill impossible")
    global_median = np.median(image[unmasked])
    half = fill.k // 2
    h, w = image.shape[:2]
    ys, xs = np.nonzero(union)
    for y, x in zip(ys, xs):
        y0, y1 = max(0, y - half), min(h, y + half + 1)
        x0, x1 = max(0, x - half), min(w, x + half + 1)
        window = image[y0:y1, x0:x1]
        keep = unmasked[y0:y1, x0:x1]
        if keep.any():
            out[y, x] = np.median(window[keep])
        else:
            out[y, x] = global_median
    return CleanedImage(pixels=out, removals=removals)


def export_thermal_summary(crop: Crop) -> ThermalSummary:
    """Min/max/mean/std of crop intensities plus source-frame geometry."""
    if crop.pixels.size == 0:
        raise PostprocessError("cannot summarize an empty crop")
    values = crop.pixels.astype(np.float64)
    return ThermalSummary(
        category=crop.category,
        region=crop.region,
        min=float(values.min()),
        max=float(values.max()),
        mean=float(values.mean()),
        std=float(values.std()),
    )
