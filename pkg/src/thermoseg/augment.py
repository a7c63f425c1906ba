"""Annotation-consistent training-time augmentation.

Transforms are conservative and label-preserving for facade
thermographs: horizontal flip, mild scale jitter, small rotation, and
intensity jitter.  Geometric transforms hit the image, polygons, masks,
and boxes identically; intensity jitter never touches geometry.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import (
    BBox,
    Polygon,
    RLEMask,
    mask_to_bbox,
    mask_to_rle,
    polygon_to_mask,
    rle_to_mask,
)
from .manifest import Annotation

MIN_INSTANCE_PIXELS = 10
MAX_ROTATION_DEG = 15.0


@dataclass(frozen=True)
class AugmentSpec:
    horizontal_flip: float = 0.5
    scale_jitter: tuple[float, float] | None = (0.9, 1.1)
    rotation: tuple[float, float] | None = (-8.0, 8.0)
    intensity_jitter: tuple[float, float] | None = (10.0, 0.12)  # (brightness, contrast delta)
    seed: int = 0

    def __post_init__(self) -> None:
        if not (0.0 <= self.horizontal_flip <= 1.0):
            raise ValueError("flip probability must be in [0, 1]")
        if self.scale_jitter is not None:
            lo, hi = self.scale_jitter
            if not (0 < lo <= hi):
                raise ValueError(f"bad scale jitter range ({lo}, {hi})")
        if self.rotation is not None:
            lo, hi = self.rotation
            if lo > hi or lo < -MAX_ROTATION_DEG or hi > MAX_ROTATION_DEG:
                raise ValueError(
                    f"rotation range must lie within +-{MAX_ROTATION_DEG} degrees"
                )
        if self.intensity_jitter is not None:
            b, c = self.intensity_jitter
            if b < 0 or c < 0:
                raise ValueError("intensity jitter deltas must be non-negative")

    @classmethod
    def disabled(cls) -> "AugmentSpec":
        return cls(horizontal_flip=0.0, scale_jitter=None, rotation=None, intensity_jitter=None)

    @property
    def enabled(self) -> bool:
        return (
            self.horizontal_flip > 0
            or self.scale_jitter is not None
            or self.rotation is not None
            or self.intensity_jitter is not None
        )

    def to_dict(self) -> dict:
        return {
            "horizontal_flip": self.horizontal_flip,
            "scale_jitter": list(self.scale_jitter) if self.scale_jitter else None,
            "rotation": list(self.rotation) if self.rotation else None,
            "intensity_jitter": list(self.intensity_jitter) if self.intensity_jitter else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "AugmentSpec":
        tup = lambda v: tuple(v) if v is not None else None
        return cls(
            horizontal_flip=float(obj.get("horizontal_flip", 0.0)),
            scale_jitter=tup(obj.get("scale_jitter")),
            rotation=tup(obj.get("rotation")),
            intensity_jitter=tup(obj.get("intensity_jitter")),
            seed=int(obj.get("seed", 0)),
        )


def affine_matrices(
    width: int, height: int, angle: float, scale: float
) -> tuple[np.ndarray, np.ndarray]:
    """Rotation+scale about the image center as two 2x3 matrices.

    The first applies to geometric points, whose pixel centers sit at
    half-integer coordinates; the second is the equivalent map in the
    integer-index convention cv2.warpAffine uses.  Using the matching
    pair keeps polygon and raster transforms aligned.
    """
    points = cv2.getRotationMatrix2D((width / 2.0, height / 2.0), angle, scale)
    index = cv2.getRotationMatrix2D((width / 2.0 - 0.5, height / 2.0 - 0.5), angle, scale)
    return points, index


def apply_pipeline(
    image: np.ndarray,
    annotations: list[Annotation],
    spec: AugmentSpec,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, list[Annotation]]:
    """Apply the augmentation draw to an image and its annotations.

    Deterministic given the rng state.  Instances whose visible area
    drops below MIN_INSTANCE_PIXELS after the geometric transforms are
    removed.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    img = image
    anns = list(annotations)

    if spec.horizontal_flip > 0 and rng.random() < spec.horizontal_flip:
        img = np.fliplr(img).copy()
        anns = [_flip_annotation(a, img.shape[1]) for a in anns]

    scale = rng.uniform(*spec.scale_jitter) if spec.scale_jitter is not None else 1.0
    angle = rng.uniform(*spec.rotation) if spec.rotation is not None else 0.0
    if scale != 1.0 or angle != 0.0:
        h, w = img.shape[:2]
        points_matrix, index_matrix = affine_matrices(w, h, angle, scale)
        img = cv2.warpAffine(img, index_matrix, (w, h), flags=cv2.INTER_LINEAR, borderValue=0)
        warped = (_warp_annotation(a, points_matrix, index_matrix, w, h) for a in anns)
        anns = [a for a in warped if a is not None]

    if spec.intensity_jitter is not None:
        b_delta, c_delta = spec.intensity_jitter
        brightness = rng.uniform(-b_delta, b_delta)
        contrast = rng.uniform(1.0 - c_delta, 1.0 + c_delta)
        img = np.clip(img.astype(np.float64) * contrast + brightness, 0, 255).astype(
            image.dtype
        )
    return img, anns


def _flip_annotation(a: Annotation, width: int) -> Annotation:
    if isinstance(a.segmentation, RLEMask):
        segmentation: list[Polygon] | RLEMask = mask_to_rle(
            np.fliplr(rle_to_mask(a.segmentation))
        )
    else:
        segmentation = [
            Polygon(np.stack([width - p.points[:, 0], p.points[:, 1]], axis=1))
            for p in a.segmentation
        ]
    bbox = BBox(width - a.bbox.x2, a.bbox.y, a.bbox.w, a.bbox.h)
    return Annotation(
        annotation_id=a.annotation_id,
        image_id=a.image_id,
        category_id=a.category_id,
        segmentation=segmentation,
        bbox=bbox,
        area=a.area,
        iscrowd=a.iscrowd,
    )


def _warp_annotation(
    a: Annotation,
    points_matrix: np.ndarray,
    index_matrix: np.ndarray,
    width: int,
    height: int,
) -> Annotation | None:
    if isinstance(a.segmentation, RLEMask):
        mask = cv2.warpAffine(
            rle_to_mask(a.segmentation).astype(np.uint8),
            index_matrix,
            (width, height),
            flags=cv2.INTER_NEAREST,
            borderValue=0,
        ).astype(bool)
        segmentation: list[Polygon] | RLEMask = mask_to_rle(mask)
    else:
        segmentation = [p.affine(points_matrix) for p in a.segmentation]
        mask = polygon_to_mask(segmentation, width, height)
    area = int(mask.sum())
    if area < MIN_INSTANCE_PIXELS:
        return None
    return Annotation(
        annotation_id=a.annotation_id,
        image_id=a.image_id,
        category_id=a.category_id,
        segmentation=segmentation,
        bbox=mask_to_bbox(mask),
        area=float(area),
        iscrowd=a.iscrowd,
    )
