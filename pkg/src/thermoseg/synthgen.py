"""Procedural thermal-style facade scenes with exact ground truth.

Stands in for a real survey dataset at desk scale.  Shape grammar per
class: window/door are bright-bordered rectangles (doors taller than
wide), fence is a row of thin vertical bars, tree a blob cluster, bin a
small rounded rectangle, road a bottom horizontal band, other a random
convex polygon.  Obstructive objects may occlude heat-loss objects; the
annotation then carries the recomputed visible-region mask as RLE.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .geometry import Polygon, mask_to_bbox, mask_to_rle, polygon_to_mask
from .manifest import (
    TO_ORDER,
    Annotation,
    CategoryTable,
    DatasetManifest,
    ImageRecord,
    SplitTag,
)

MIN_CANVAS = 64
MIN_VISIBLE_PIXELS = 10
MIN_VISIBLE_SHARE = 0.45


class PlacementError(RuntimeError):
    """Canvas cannot host the requested instance minima."""


@dataclass(frozen=True)
class IntensityPalette:
    """8-bit pseudo-thermal rendering values."""

    background_mean: float = 96.0
    background_sigma: float = 7.0
    heat_loss_offset: float = 62.0
    obstructive_offset: float = -34.0


def _default_counts() -> dict[str, tuple[int, int]]:
    return {
        "window": (1, 4),
        "door": (0, 2),
        "fence": (0, 1),
        "tree": (0, 2),
        "bin": (0, 2),
        "road": (0, 1),
        "other": (0, 3),
    }


@dataclass
class SceneSpec:
    width: int = 256
    height: int = 256
    counts: dict[str, tuple[int, int]] = field(default_factory=_default_counts)
    rates: dict[str, float] | None = None  # optional mean count/image, clamped into ranges
    palette: IntensityPalette = field(default_factory=IntensityPalette)
    occlusion_probability: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if self.width < MIN_CANVAS or self.height < MIN_CANVAS:
            raise ValueError(f"canvas must be at least {MIN_CANVAS}x{MIN_CANVAS}")
        if not (0.0 <= self.occlusion_probability <= 1.0):
            raise ValueError("occlusion probability must be in [0, 1]")
        for name, (lo, hi) in self.counts.items():
            if name not in TO_ORDER:
                raise ValueError(f"unknown target-object class {name!r}")
            if lo < 0 or lo > hi:
                raise ValueError(f"bad count range for {name}: ({lo}, {hi})")

    @classmethod
    def from_dict(cls, obj: dict) -> "SceneSpec":
        counts = {k: tuple(v) for k, v in obj.get("counts", _default_counts()).items()}
        palette = IntensityPalette(**obj.get("palette", {}))
        return cls(
            width=int(obj.get("width", 256)),
            height=int(obj.get("height", 256)),
            counts=counts,
            rates={k: float(v) for k, v in obj["rates"].items()} if obj.get("rates") else None,
            palette=palette,
            occlusion_probability=float(obj.get("occlusion_probability", 0.3)),
            seed=int(obj.get("seed", 0)),
        )


# Per-image instance rates matching a survey-scale class balance
# (roughly 5.3 instances per image, dominated by windows and misc clutter).
SURVEY_RATES = {
    "window": 1.85,
    "door": 0.64,
    "fence": 0.14,
    "tree": 0.20,
    "bin": 0.27,
    "road": 0.25,
    "other": 1.95,
}


def survey_proportioned_spec(width: int = 256, height: int = 256, seed: int = 0) -> SceneSpec:
    counts = {name: (0, max(2, int(math.ceil(r)) + 1)) for name, r in SURVEY_RATES.items()}
    counts["road"] = (0, 1)
    return SceneSpec(width=width, height=height, counts=counts, rates=dict(SURVEY_RATES), seed=seed)


@dataclass
class _Placed:
    name: str
    parts: list[Polygon]
    mask: np.ndarray
    visible: np.ndarray
    texture: np.ndarray  # full-canvas float field, painted under `mask`


def generate_scene(
    spec: SceneSpec, seed: int
) -> tuple[np.ndarray, list[Annotation]]:
    """Render one scene; deterministic for a fixed (spec, seed)."""
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed % 2**63, seed % 2**63]))
    table = CategoryTable.default()
    h, w = spec.height, spec.width

    placed: list[_Placed] = []
    union = np.zeros((h, w), dtype=bool)

    # z-order: road lowest, then heat-loss sources, then obstructive clutter
    order = ["road", "window", "door", "fence", "tree", "bin", "other"]
    for name in order:
        lo, hi = spec.counts.get(name, (0, 0))
        count = _draw_count(rng, lo, hi, (spec.rates or {}).get(name))
        for i in range(count):
            ok = _place_instance(name, spec, rng, placed, union)
            if not ok and i < lo:
                raise PlacementError(
                    f"could not place required instance {i + 1}/{lo} of {name!r} "
                    f"on a {w}x{h} canvas"
                )
            if not ok:
                break

    image = _render(spec, rng, placed)

    annotations: list[Annotation] = []
    ann_id = 1
    for inst in placed:
        visible_area = int(inst.visible.sum())
        if visible_area < MIN_VISIBLE_PIXELS:
            continue
        if visible_area == int(inst.mask.sum()):
            segmentation: list[Polygon] | object = inst.parts
        else:
            segmentation = mask_to_rle(inst.visible)
        annotations.append(
            Annotation(
                annotation_id=ann_id,
                image_id=0,
                category_id=table.by_name(inst.name).category_id,
                segmentation=segmentation,
                bbox=mask_to_bbox(inst.visible),
                area=float(visible_area),
            )
        )
        ann_id += 1
    return image, annotations


def _draw_count(rng: np.random.Generator, lo: int, hi: int, rate: float | None) -> int:
    if rate is None:
        return int(rng.integers(lo, hi + 1))
    base = int(math.floor(rate))
    count = base + (1 if rng.random() < rate - base else 0)
    return min(max(count, lo), hi)


def _place_instance(
    name: str,
    spec: SceneSpec,
    rng: np.random.Generator,
    placed: list[_Placed],
    union: np.ndarray,
) -> bool:
    h, w = spec.height, spec.width
    may_occlude = rng.random() < spec.occlusion_probability
    for _ in range(40):
        parts = _sample_shape(name, w, h, rng)
        mask = polygon_to_mask(parts, w, h)
        if int(mask.sum()) < 3 * MIN_VISIBLE_PIXELS:
            continue
        if not may_occlude and (mask & union).any():
            continue
        if may_occlude and not _keeps_others_visible(mask, placed):
            continue
        texture = _texture_for(name, mask, spec, rng)
        for earlier in placed:
            earlier.visible &= ~mask
        placed.append(
            _Placed(name=name, parts=parts, mask=mask, visible=mask.copy(), texture=texture)
        )
        union |= mask
        return True
    return False


def _keeps_others_visible(new_mask: np.ndarray, placed: list[_Placed]) -> bool:
    for inst in placed:
        remaining = int((inst.visible & ~new_mask).sum())
        full = int(inst.mask.sum())
        if remaining < max(MIN_VISIBLE_PIXELS, int(MIN_VISIBLE_SHARE * full)):
            return False
    return True


def _render(spec: SceneSpec, rng: np.random.Generator, placed: list[_Placed]) -> np.ndarray:
    h, w = spec.height, spec.width
    field = rng.normal(spec.palette.background_mean, spec.palette.background_sigma, (h, w))
    for inst in placed:  # z order == placement order
        field[inst.mask] = inst.texture[inst.mask]
    return np.clip(field, 0, 255).astype(np.uint8)


def _texture_for(
    name: str, mask: np.ndarray, spec: SceneSpec, rng: np.random.Generator
) -> np.ndarray:
    h, w = spec.height, spec.width
    base = spec.palette.background_mean
    if name in ("window", "door"):
        level = base + spec.palette.heat_loss_offset + rng.uniform(-8, 8)
    elif name == "other":
        level = base + spec.palette.obstructive_offset + rng.uniform(-10, 40)
    else:
        level = base + spec.palette.obstructive_offset + rng.uniform(-8, 8)
    texture = rng.normal(level, 3.0, (h, w))
    if name in ("window", "door"):
        inner = cv2.erode(
            mask.astype(np.uint8), np.ones((3, 3), np.uint8), iterations=2
        ).astype(bool)
        texture[mask & ~inner] += rng.uniform(18, 30)
    return texture


def _sample_shape(name: str, w: int, h: int, rng: np.random.Generator) -> list[Polygon]:
    if name == "window":
        ww = rng.uniform(0.07, 0.16) * w
        hh = ww * rng.uniform(0.8, 1.5)
        return [_rect(rng, w, h, ww, hh)]
    if name == "door":
        ww = rng.uniform(0.05, 0.10) * w
        hh = ww * rng.uniform(1.9, 3.1)
        return [_rect(rng, w, h, ww, hh)]
    if name == "fence":
        return _fence(rng, w, h)
    if name == "tree":
        return _tree(rng, w, h)
    if name == "bin":
        return [_octagon(rng, w, h)]
    if name == "road":
        return [_road(rng, w, h)]
    if name == "other":
        return [_convex_blob(rng, w, h)]
    raise ValueError(f"unknown shape grammar {name!r}")


def _rect(rng: np.random.Generator, w: int, h: int, ww: float, hh: float) -> Polygon:
    ww = min(ww, w - 2)
    hh = min(hh, h - 2)
    x0 = rng.uniform(1, max(1.0001, w - 1 - ww))
    y0 = rng.uniform(1, max(1.0001, h - 1 - hh))
    return Polygon(
        np.array([[x0, y0], [x0 + ww, y0], [x0 + ww, y0 + hh], [x0, y0 + hh]])
    )


def _fence(rng: np.random.Generator, w: int, h: int) -> list[Polygon]:
    n_bars = int(rng.integers(3, 7))
    bar_w = float(rng.integers(2, 4))
    gap = float(rng.integers(4, 10))
    bar_h = rng.uniform(0.12, 0.3) * h
    span = n_bars * bar_w + (n_bars - 1) * gap
    span = min(span, w - 2)
    x0 = rng.uniform(1, max(1.0001, w - 1 - span))
    y0 = rng.uniform(1, max(1.0001, h - 1 - bar_h))
    bars = []
    for i in range(n_bars):
        bx = x0 + i * (bar_w + gap)
        if bx + bar_w > w - 1:
            break
        bars.append(
            Polygon(
                np.array(
                    [[bx, y0], [bx + bar_w, y0], [bx + bar_w, y0 + bar_h], [bx, y0 + bar_h]]
                )
            )
        )
    return bars


def _tree(rng: np.random.Generator, w: int, h: int) -> list[Polygon]:
    n_blobs = 1 + int(rng.random() < 0.4)
    radius = rng.uniform(0.05, 0.11) * min(w, h)
    cx = rng.uniform(radius + 1, w - radius - 1)
    cy = rng.uniform(radius + 1, h - radius - 1)
    blobs = []
    for _ in range(n_blobs):
        ox = cx + rng.uniform(-0.6, 0.6) * radius
        oy = cy + rng.uniform(-0.6, 0.6) * radius
        blobs.append(_radial_blob(rng, ox, oy, radius, w, h))
    return blobs


def _radial_blob(
    rng: np.random.Generator, cx: float, cy: float, radius: float, w: int, h: int
) -> Polygon:
    n = 12
    angles = np.linspace(0, 2 * math.pi, n, endpoint=False)
    radii = radius * rng.uniform(0.7, 1.25, n)
    xs = np.clip(cx + radii * np.cos(angles), 0, w)
    ys = np.clip(cy + radii * np.sin(angles), 0, h)
    return Polygon(np.stack([xs, ys], axis=1))


def _octagon(rng: np.random.Generator, w: int, h: int) -> Polygon:
    ww = rng.uniform(0.04, 0.08) * w
    hh = ww * rng.uniform(1.0, 1.6)
    x0 = rng.uniform(1, max(1.0001, w - 1 - ww))
    y0 = rng.uniform(1, max(1.0001, h - 1 - hh))
    c = 0.25 * min(ww, hh)
    return Polygon(
        np.array(
            [
                [x0 + c, y0],
                [x0 + ww - c, y0],
                [x0 + ww, y0 + c],
                [x0 + ww, y0 + hh - c],
                [x0 + ww - c, y0 + hh],
                [x0 + c, y0 + hh],
                [x0, y0 + hh - c],
                [x0, y0 + c],
            ]
        )
    )


def _road(rng: np.random.Generator, w: int, h: int) -> Polygon:
    band = rng.uniform(0.08, 0.18) * h
    y0 = h - band
    return Polygon(np.array([[0.0, y0], [float(w), y0], [float(w), float(h)], [0.0, float(h)]]))


def _convex_blob(rng: np.random.Generator, w: int, h: int) -> Polygon:
    size = rng.uniform(0.06, 0.15) * min(w, h)
    cx = rng.uniform(size + 1, w - size - 1)
    cy = rng.uniform(size + 1, h - size - 1)
    pts = np.stack(
        [cx + rng.uniform(-size, size, 8), cy + rng.uniform(-size, size, 8)], axis=1
    )
    hull = cv2.convexHull(pts.astype(np.float32)).reshape(-1, 2).astype(np.float64)
    if len(hull) < 3:
        hull = np.array([[cx - size, cy], [cx + size, cy], [cx, cy + size]])
    return Polygon(hull)


def generate_dataset(
    spec: SceneSpec,
    n_images: int,
    seed: int,
    split_tag: SplitTag = "train",
    out_dir: Path | None = None,
) -> DatasetManifest:
    """Generate n scenes; writes one grayscale PNG per scene when out_dir given."""
    if n_images < 0:
        raise ValueError("n_images must be >= 0")
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    images: list[ImageRecord] = []
    annotations: list[Annotation] = []
    next_ann = 1
    for i in range(n_images):
        image, anns = generate_scene(spec, seed + i)
        image_id = i + 1
        file_ref = f"scene_{image_id:05d}.png"
        if out_dir is not None:
            cv2.imwrite(str(out_dir / file_ref), image)
        images.append(
            ImageRecord(image_id=image_id, file_ref=file_ref, width=spec.width, height=spec.height)
        )
        for a in anns:
            a.annotation_id = next_ann
            a.image_id = image_id
            next_ann += 1
            annotations.append(a)
    return DatasetManifest(
        images=images,
        annotations=annotations,
        categories=CategoryTable.default(),
        split_tag=split_tag,
        base_dir=out_dir,
    )
