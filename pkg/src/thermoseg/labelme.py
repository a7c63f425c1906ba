"""Per-image polygon annotation (LabelMe-style JSON) ingestion.

Each document carries ``shapes``, each shape a ``label`` plus
``points: [[x, y], ...]``.  Labels map to categories by name; bbox and
area derive from the polygon (vertex tight box, rasterized pixel count).
"""

from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .geometry import BBox, GeometryError, Polygon, polygon_to_mask
from .manifest import (
    Annotation,
    CategoryTable,
    DatasetManifest,
    ImageRecord,
    ManifestParseError,
    SplitTag,
    _check_references,
)


class LabelError(ValueError):
    """Shape label missing from the category table."""


class DegeneratePolygonError(ValueError):
    """Shape with fewer than three points or zero area."""


def parse_labelme_record(
    raw: bytes | str | Path,
    image: ImageRecord,
    categories: CategoryTable | None = None,
) -> list[Annotation]:
    """Convert one per-image annotation document into Annotations.

    Annotation ids are local (1..n within the record); callers merging
    multiple records reassign them densely.
    """
    if categories is None:
        categories = CategoryTable.default()
    if isinstance(raw, Path):
        raw = raw.read_bytes()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"malformed annotation document: {exc.msg}", offset=exc.pos)

    shapes = doc.get("shapes")
    if not isinstance(shapes, list):
        raise ManifestParseError("document has no 'shapes' list")

    known = set(categories.names())
    annotations: list[Annotation] = []
    for idx, shape in enumerate(shapes):
        label = shape.get("label")
        if label not in known:
            raise LabelError(f"shape {idx}: unknown label {label!r} (known: {sorted(known)})")
        points = shape.get("points", [])
        if len(points) < 3:
            raise DegeneratePolygonError(
                f"shape {idx} ({label!r}): polygon needs >= 3 points, got {len(points)}"
            )
        try:
            polygon = Polygon(np.asarray(points, dtype=np.float64))
        except GeometryError as exc:
            raise DegeneratePolygonError(f"shape {idx} ({label!r}): {exc}") from exc

        annotations.append(
            _annotation_from_polygon(
                polygon,
                annotation_id=idx + 1,
                image=image,
                category_id=categories.by_name(label).category_id,
            )
        )
    return annotations


def _annotation_from_polygon(
    polygon: Polygon, annotation_id: int, image: ImageRecord, category_id: int
) -> Annotation:
    xmin, ymin, xmax, ymax = polygon.bounds()
    xmin = max(0.0, xmin)
    ymin = max(0.0, ymin)
    xmax = min(float(image.width), xmax)
    ymax = min(float(image.height), ymax)
    if xmax <= xmin or ymax <= ymin:
        raise DegeneratePolygonError(
            f"polygon for annotation {annotation_id} lies outside the {image.width}x"
            f"{image.height} canvas"
        )
    bbox = BBox(xmin, ymin, xmax - xmin, ymax - ymin)
    area = _rasterized_area(polygon, image.width, image.height)
    return Annotation(
        annotation_id=annotation_id,
        image_id=image.image_id,
        category_id=category_id,
        segmentation=[polygon],
        bbox=bbox,
        area=float(area),
    )


def _rasterized_area(polygon: Polygon, width: int, height: int) -> int:
    # rasterize only the integer-aligned window around the polygon so the
    # pixel grid matches the full-canvas grid
    xmin, ymin, xmax, ymax = polygon.bounds()
    x0 = max(0, int(math.floor(xmin)))
    y0 = max(0, int(math.floor(ymin)))
    x1 = min(width, int(math.ceil(xmax)))
    y1 = min(height, int(math.ceil(ymax)))
    if x1 <= x0 or y1 <= y0:
        return 0
    local = polygon.transformed(1.0, -x0, -y0)
    return int(polygon_to_mask(local, x1 - x0, y1 - y0).sum())


def labelme_to_coco(
    records: list[tuple[ImageRecord, bytes | str | Path]],
    categories: CategoryTable | None = None,
    split_tag: SplitTag = "train",
) -> DatasetManifest:
    """Merge per-image documents into one manifest with dense ids from 1."""
    if categories is None:
        categories = CategoryTable.default()
    images: list[ImageRecord] = []
    annotations: list[Annotation] = []
    next_ann = 1
    for i, (image, raw) in enumerate(records, start=1):
        renumbered = ImageRecord(
            image_id=i, file_ref=image.file_ref, width=image.width, height=image.height
        )
        images.append(renumbered)
        try:
            parsed = parse_labelme_record(raw, renumbered, categories)
        except (LabelError, DegeneratePolygonError, ManifestParseError) as exc:
            raise type(exc)(f"{image.file_ref}: {exc}") from exc
        for a in parsed:
            a.annotation_id = next_ann
            next_ann += 1
            annotations.append(a)
    manifest = DatasetManifest(
        images=images, annotations=annotations, categories=categories, split_tag=split_tag
    )
    _check_references(manifest)
    return manifest
