"""Letterbox resizing into a square model-input canvas.

Content is scaled by ``target / max(w, h)`` (aspect ratio preserved),
centered, and the border padded with a configurable value.  The transform
metadata is kept so predictions made in the model frame can be mapped
back to source coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import cv2
import numpy as np

from .geometry import BBox, Polygon, RLEMask, mask_to_bbox, mask_to_rle, rle_to_mask
from .manifest import Annotation

DEFAULT_TARGET = 512


@dataclass(frozen=True)
class TransformMeta:
    """Affine map p_target = p_source * scale + (dx, dy), plus raster layout."""

    scale: float
    dx: float
    dy: float
    source_width: int
    source_height: int
    target: int

    @property
    def content_size(self) -> tuple[int, int]:
        """(width, height) of the resized content raster inside the canvas."""
        return (
            max(1, int(round(self.source_width * self.scale))),
            max(1, int(round(self.source_height * self.scale))),
        )

    @property
    def content_origin(self) -> tuple[int, int]:
        return int(round(self.dx)), int(round(self.dy))

    def box_to_target(self, box: BBox) -> BBox:
        return box.scaled(self.scale, self.dx, self.dy)

    def box_to_source(self, box: BBox) -> BBox:
        return BBox(
            (box.x - self.dx) / self.scale,
            (box.y - self.dy) / self.scale,
            box.w / self.scale,
            box.h / self.scale,
        )

    def polygon_to_source(self, polygon: Polygon) -> Polygon:
        return Polygon((polygon.points - np.array([self.dx, self.dy])) / self.scale)

    def mask_to_source(self, mask: np.ndarray) -> np.ndarray:
        """Nearest-neighbor back-projection of a target-frame mask."""
        ox, oy = self.content_origin
        cw, ch = self.content_size
        content = np.asarray(mask, dtype=np.uint8)[oy : oy + ch, ox : ox + cw]
        restored = cv2.resize(
            content, (self.source_width, self.source_height), interpolation=cv2.INTER_NEAREST
        )
        return restored.astype(bool)


def resize_record(
    image: np.ndarray,
    annotations: list[Annotation],
    target: int = DEFAULT_TARGET,
    pad_value: int = 0,
) -> tuple[np.ndarray, list[Annotation], TransformMeta]:
    """Letterbox an image and its annotations into a target x target canvas."""
    if image.size == 0:
        raise ValueError("empty image")
    if target <= 0:
        raise ValueError(f"target must be positive, got {target}")
    h, w = image.shape[:2]
    scale = target / max(w, h)
    meta = TransformMeta(
        scale=scale,
        dx=(target - w * scale) / 2.0,
        dy=(target - h * scale) / 2.0,
        source_width=w,
        source_height=h,
        target=target,
    )
    cw, ch = meta.content_size
    ox, oy = meta.content_origin

    if image.ndim == 2:
        canvas = np.full((target, target), pad_value, dtype=image.dtype)
    else:
        canvas = np.full((target, target, image.shape[2]), pad_value, dtype=image.dtype)
    if (cw, ch) == (w, h):
        content = image
    else:
        interp = cv2.INTER_LINEAR if scale > 1 else cv2.INTER_AREA
        content = cv2.resize(image, (cw, ch), interpolation=interp)
        if content.ndim != image.ndim:  # cv2 drops trailing singleton channels
            content = content[..., None]
    canvas[oy : oy + ch, ox : ox + cw] = content

    out_annotations = [_transform_annotation(a, meta) for a in annotations]
    return canvas, out_annotations, meta


def _transform_annotation(a: Annotation, meta: TransformMeta) -> Annotation:
    if isinstance(a.segmentation, RLEMask):
        mask = rle_to_mask(a.segmentation)
        cw, ch = meta.content_size
        ox, oy = meta.content_origin
        resized = cv2.resize(mask.astype(np.uint8), (cw, ch), interpolation=cv2.INTER_NEAREST)
        canvas = np.zeros((meta.target, meta.target), dtype=bool)
        canvas[oy : oy + ch, ox : ox + cw] = resized.astype(bool)
        segmentation: list[Polygon] | RLEMask = mask_to_rle(canvas)
        bbox = mask_to_bbox(canvas) if canvas.any() else meta.box_to_target(a.bbox)
    else:
        segmentation = [p.transformed(meta.scale, meta.dx, meta.dy) for p in a.segmentation]
        bbox = meta.box_to_target(a.bbox)
    return Annotation(
        annotation_id=a.annotation_id,
        image_id=a.image_id,
        category_id=a.category_id,
        segmentation=segmentation,
        bbox=bbox,
        area=a.area * meta.scale * meta.scale,
        iscrowd=a.iscrowd,
    )
