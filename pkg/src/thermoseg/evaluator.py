"""COCO-protocol evaluation implemented from scratch.

IoU matching, greedy assignment, 101-point interpolated average
precision, and mAP 50-95 (mean over the IoU thresholds 0.50 to 0.95 in
steps of 0.05, then over categories) for both bounding boxes (BBOX) and
masks (SEGM).

Protocol conventions, pinned so results are reproducible bit-for-bit:

* detections are capped at ``max_detections`` per image (highest scores
  kept, across categories);
* within an image, and globally when building the PR curve, detections
  are ranked by descending score with ties broken by original input
  order (stable sort), images visited in manifest order;
* a detection greedily matches the not-yet-matched ground truth with the
  highest IoU >= threshold, ties broken by lowest ground-truth index;
* precision is made monotonically non-increasing before sampling at the
  101 recall points {0.00, 0.01, ..., 1.00};
* categories with no ground truth are excluded from the overall mean;
  with no detections either, their AP is undefined (reported "n/a").
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

from .geometry import BBox
from .manifest import Annotation, DatasetManifest
from .predictions import InstancePrediction

IOU_THRESHOLDS: tuple[float, ...] = tuple(k / 100 for k in range(50, 100, 5))
RECALL_POINTS = 101
MAX_DETECTIONS = 100

Mode = str  # "bbox" | "segm"


def iou_bbox(a: BBox, b: BBox) -> float:
    """Box intersection-over-union; degenerate overlap gives 0."""
    ix = min(a.x2, b.x2) - max(a.x, b.x)
    iy = min(a.y2, b.y2) - max(a.y, b.y)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return inter / union


def iou_mask(a: np.ndarray, b: np.ndarray) -> float:
    """Mask intersection-over-union; two empty masks give 0."""
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    inter = int(np.logical_and(a, b).sum())
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    return inter / union


def greedy_match(iou: np.ndarray, threshold: float) -> list[int | None]:
    """Greedy assignment: rows are detections in rank order, columns GTs.

    Each detection takes the unmatched ground truth with the highest
    IoU >= threshold (lowest index on ties); returns one matched column
    index (or None) per row.
    """
    n_det, n_gt = iou.shape
    taken = [False] * n_gt
    out: list[int | None] = []
    for d in range(n_det):
        best = None
        best_iou = -1.0
        for g in range(n_gt):
            if taken[g]:
                continue
            v = float(iou[d, g])
            if v >= threshold and v > best_iou:
                best = g
                best_iou = v
        if best is not None:
            taken[best] = True
        out.append(best)
    return out


@dataclass
class MatchResult:
    """Greedy matching outcome for one category at one IoU threshold."""

    category_id: int
    threshold: float
    mode: Mode
    pairs: list[tuple[InstancePrediction, int | None]]  # (det, matched annotation_id)
    unmatched_gt: int


def match_detections(
    dets: list[InstancePrediction],
    gts: list[Annotation],
    threshold: float,
    mode: Mode = "bbox",
    width: int | None = None,
    height: int | None = None,
) -> MatchResult:
    """Match one image's detections of one category against its GTs."""
    category_id = dets[0].category_id if dets else (gts[0].category_id if gts else 0)
    ranked = sorted(dets, key=lambda p: -p.score)
    if mode == "segm" and ranked:
        if width is None or height is None:
            height, width = ranked[0].mask.shape
        gt_masks = [g.rasterize(width, height) for g in gts]
        iou = np.array(
            [[iou_mask(d.mask, gm) for gm in gt_masks] for d in ranked], dtype=np.float64
        ).reshape(len(ranked), len(gts))
    else:
        iou = np.array(
            [[iou_bbox(d.bbox, g.bbox) for g in gts] for d in ranked], dtype=np.float64
        ).reshape(len(ranked), len(gts))
    assignment = greedy_match(iou, threshold)
    pairs = [
        (d, gts[g].annotation_id if g is not None else None)
        for d, g in zip(ranked, assignment)
    ]
    matched = sum(1 for g in assignment if g is not None)
    return MatchResult(category_id, threshold, mode, pairs, unmatched_gt=len(gts) - matched)


def average_precision(
    scored_flags: list[tuple[float, bool]], total_gt: int
) -> float | None:
    """101-point interpolated AP from (score, is_true_positive) pairs.

    Pairs may come unsorted; ranking is a stable sort by descending
    score.  With zero ground truths, AP is undefined (None) when there
    are no detections and 0 when there are.
    """
    if total_gt == 0:
        return None if not scored_flags else 0.0
    if not scored_flags:
        return 0.0
    ordered = sorted(scored_flags, key=lambda t: -t[0])
    precisions: list[float] = []
    recalls: list[float] = []
    tp = 0
    fp = 0
    for _, flag in ordered:
        if flag:
            tp += 1
        else:
            fp += 1
        precisions.append(tp / (tp + fp))
        recalls.append(tp / total_gt)
    for i in range(len(precisions) - 2, -1, -1):
        if precisions[i] < precisions[i + 1]:
            precisions[i] = precisions[i + 1]
    total = 0.0
    j = 0
    for k in range(RECALL_POINTS):
        r = k / 100
        while j < len(recalls) and recalls[j] < r:
            j += 1
        if j == len(recalls):
            break
        total += precisions[j]
    return total / RECALL_POINTS


@dataclass
class EvaluationReport:
    """AP per category x IoU threshold x mode, plus mAP 50-95 aggregates."""

    categories: list[str]
    thresholds: tuple[float, ...]
    detection_cap: int
    gt_counts: dict[str, int]
    ap: dict[str, dict[Mode, dict[float, float | None]]]
    per_category: dict[str, dict[Mode, float | None]]
    overall: dict[Mode, float | None]
    modes: tuple[Mode, ...] = ("bbox", "segm")

    def rows(self) -> list[tuple[str, float | None, float | None]]:
        """(category, bbox mAP, segm mAP) rows in category-table order."""
        return [
            (
                name,
                self.per_category[name].get("bbox"),
                self.per_category[name].get("segm"),
            )
            for name in self.categories
        ]

    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["category", "gt_count"] + [f"map_50_95_{m}" for m in self.modes])
        fmt = lambda v: "n/a" if v is None else f"{100.0 * v:.1f}"
        for name in self.categories:
            writer.writerow(
                [name, self.gt_counts[name]]
                + [fmt(self.per_category[name].get(m)) for m in self.modes]
            )
        writer.writerow(["overall", sum(self.gt_counts.values())]
                        + [fmt(self.overall.get(m)) for m in self.modes])
        return buf.getvalue()


def evaluate(
    predictions: list[InstancePrediction],
    manifest: DatasetManifest,
    modes: tuple[Mode, ...] = ("bbox", "segm"),
    thresholds: tuple[float, ...] = IOU_THRESHOLDS,
    max_detections: int = MAX_DETECTIONS,
) -> EvaluationReport:
    """Evaluate predictions against a manifest's ground truth."""
    for mode in modes:
        if mode not in ("bbox", "segm"):
            raise ValueError(f"unknown mode {mode!r}")
    image_ids = {r.image_id for r in manifest.images}
    for p in predictions:
        if p.image_id not in image_ids:
            raise ValueError(f"prediction references unknown image id {p.image_id}")

    by_image: dict[int, list[InstancePrediction]] = {r.image_id: [] for r in manifest.images}
    for p in predictions:
        by_image[p.image_id].append(p)
    # rank within image and apply the per-image detection cap (all categories)
    for image_id, dets in by_image.items():
        ranked = sorted(dets, key=lambda p: -p.score)
        by_image[image_id] = ranked[:max_detections]

    gts_by_image: dict[int, list[Annotation]] = {r.image_id: [] for r in manifest.images}
    for a in manifest.annotations:
        gts_by_image[a.image_id].append(a)

    cat_names = manifest.categories.names()
    gt_counts = {name: 0 for name in cat_names}
    for a in manifest.annotations:
        gt_counts[manifest.categories.by_id(a.category_id).name] += 1

    ap: dict[str, dict[Mode, dict[float, float | None]]] = {
        name: {m: {} for m in modes} for name in cat_names
    }
    for mode in modes:
        # (category name) -> threshold -> accumulated (score, tp) pairs
        flags: dict[str, dict[float, list[tuple[float, bool]]]] = {
            name: {t: [] for t in thresholds} for name in cat_names
        }
        for rec in manifest.images:
            dets = by_image[rec.image_id]
            gts = gts_by_image[rec.image_id]
            for cat in manifest.categories:
                cat_dets = [d for d in dets if d.category_id == cat.category_id]
                cat_gts = [g for g in gts if g.category_id == cat.category_id]
                if not cat_dets:
                    continue
                iou = _iou_matrix(cat_dets, cat_gts, mode, rec.width, rec.height)
                for t in thresholds:
                    assignment = greedy_match(iou, t)
                    flags[cat.name][t].extend(
                        (d.score, g is not None) for d, g in zip(cat_dets, assignment)
                    )
        for name in cat_names:
            for t in thresholds:
                ap[name][mode][t] = average_precision(flags[name][t], gt_counts[name])

    per_category: dict[str, dict[Mode, float | None]] = {name: {} for name in cat_names}
    overall: dict[Mode, float | None] = {}
    for mode in modes:
        for name in cat_names:
            values = [ap[name][mode][t] for t in thresholds]
            defined = [v for v in values if v is not None]
            per_category[name][mode] = sum(defined) / len(defined) if defined else None
        contributing = [
            per_category[name][mode] for name in cat_names if gt_counts[name] >= 1
        ]
        overall[mode] = sum(contributing) / len(contributing) if contributing else None

    return EvaluationReport(
        categories=cat_names,
        thresholds=tuple(thresholds),
        detection_cap=max_detections,
        gt_counts=gt_counts,
        ap=ap,
        per_category=per_category,
        overall=overall,
        modes=tuple(modes),
    )


def _iou_matrix(
    dets: list[InstancePrediction],
    gts: list[Annotation],
    mode: Mode,
    width: int,
    height: int,
) -> np.ndarray:
    if mode == "segm":
        gt_masks = [g.rasterize(width, height) for g in gts]
        rows = [[iou_mask(d.mask, gm) for gm in gt_masks] for d in dets]
    else:
        rows = [[iou_bbox(d.bbox, g.bbox) for g in gts] for d in dets]
    return np.array(rows, dtype=np.float64).reshape(len(dets), len(gts))


def map_50_95(
    predictions: list[InstancePrediction],
    manifest: DatasetManifest,
    mode: Mode = "segm",
    max_detections: int = MAX_DETECTIONS,
) -> tuple[dict[str, float | None], float | None]:
    """Per-category and overall mAP 50-95 for one mode."""
    report = evaluate(predictions, manifest, modes=(mode,), max_detections=max_detections)
    per_category = {name: report.per_category[name][mode] for name in report.categories}
    return per_category, report.overall[mode]


def per_class_report(
    predictions: list[InstancePrediction], manifest: DatasetManifest
) -> EvaluationReport:
    """BBOX and SEGM mAP 50-95 per target-object class, in table order."""
    return evaluate(predictions, manifest, modes=("bbox", "segm"))
