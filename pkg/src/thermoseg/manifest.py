"""Dataset model: categories, images, annotations, manifests.

Manifests follow COCO-format semantics.  Category roles (heat-loss
source vs obstructive object) ride in the COCO ``supercategory`` field so
documents stay readable by stock COCO tooling.  The split tag rides in
``info.split``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from .geometry import (
    BBox,
    GeometryError,
    Polygon,
    RLEMask,
    mask_to_bbox,
    polygon_to_mask,
    rle_to_mask,
)

Role = Literal["heat_loss_source", "obstructive"]
SplitTag = Literal["train", "test", "evaluation"]

HEAT_LOSS = "heat_loss_source"
OBSTRUCTIVE = "obstructive"

# Canonical reporting order for the seven target-object classes.
TO_ORDER = ("window", "door", "fence", "tree", "bin", "road", "other")

_DEFAULT_ROLES: dict[str, Role] = {
    "window": HEAT_LOSS,
    "door": HEAT_LOSS,
    "fence": OBSTRUCTIVE,
    "tree": OBSTRUCTIVE,
    "bin": OBSTRUCTIVE,
    "road": OBSTRUCTIVE,
    "other": OBSTRUCTIVE,
}

# Tolerance bands absorbing rasterization quantization.
BBOX_TOLERANCE_PX = 1.0
AREA_RTOL = 0.02


class ManifestError(ValueError):
    """Structurally invalid manifest or annotation document."""


class ManifestParseError(ManifestError):
    """Malformed document; carries the byte offset when known."""

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message if offset is None else f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class Category:
    category_id: int
    name: str
    role: Role

    def __post_init__(self) -> None:
        if self.role not in (HEAT_LOSS, OBSTRUCTIVE):
            raise ManifestError(f"unknown role {self.role!r} for category {self.name!r}")


class CategoryTable:
    """Immutable id/name/role lookup for the target-object classes."""

    def __init__(self, entries: Iterable[Category]):
        self.entries: tuple[Category, ...] = tuple(entries)
        self._by_id = {c.category_id: c for c in self.entries}
        self._by_name = {c.name: c for c in self.entries}
        if len(self._by_id) != len(self.entries):
            raise ManifestError("duplicate category ids")
        if len(self._by_name) != len(self.entries):
            raise ManifestError("duplicate category names")

    @classmethod
    def default(cls) -> "CategoryTable":
        return cls(
            Category(i + 1, name, _DEFAULT_ROLES[name]) for i, name in enumerate(TO_ORDER)
        )

    def by_id(self, category_id: int) -> Category:
        try:
            return self._by_id[category_id]
        except KeyError:
            raise ManifestError(f"unknown category id {category_id}") from None

    def by_name(self, name: str) -> Category:
        try:
            return self._by_name[name]
        except KeyError:
            raise ManifestError(f"unknown category name {name!r}") from None

    def __contains__(self, category_id: int) -> bool:
        return category_id in self._by_id

    def __iter__(self):
        return iter(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CategoryTable) and self.entries == other.entries

    def names(self) -> list[str]:
        return [c.name for c in self.entries]

    def role_of(self, category_id: int) -> Role:
        return self.by_id(category_id).role


@dataclass(frozen=True)
class ImageRecord:
    image_id: int
    file_ref: str
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ManifestError(
                f"image {self.image_id} has non-positive size {self.width}x{self.height}"
            )


Segmentation = list[Polygon] | RLEMask


@dataclass
class Annotation:
    annotation_id: int
    image_id: int
    category_id: int
    segmentation: Segmentation
    bbox: BBox
    area: float
    iscrowd: int = 0

    def rasterize(self, width: int, height: int) -> np.ndarray:
        """Binary mask of the segmentation on the image canvas."""
        if isinstance(self.segmentation, RLEMask):
            if (self.segmentation.width, self.segmentation.height) != (width, height):
                raise GeometryError(
                    f"annotation {self.annotation_id}: RLE canvas "
                    f"{self.segmentation.width}x{self.segmentation.height} does not match "
                    f"image {width}x{height}"
                )
            return rle_to_mask(self.segmentation)
        return polygon_to_mask(self.segmentation, width, height)


@dataclass
class DatasetManifest:
    images: list[ImageRecord]
    annotations: list[Annotation]
    categories: CategoryTable
    split_tag: SplitTag = "train"
    base_dir: Path | None = None  # resolution root for relative file_refs; not serialized

    def image_by_id(self, image_id: int) -> ImageRecord:
        for rec in self.images:
            if rec.image_id == image_id:
                return rec
        raise ManifestError(f"unknown image id {image_id}")

    def annotations_for(self, image_id: int) -> list[Annotation]:
        return [a for a in self.annotations if a.image_id == image_id]

    def resolve_file(self, record: ImageRecord) -> Path:
        p = Path(record.file_ref)
        if not p.is_absolute() and self.base_dir is not None:
            p = self.base_dir / p
        return p

    def load_image(self, record: ImageRecord) -> np.ndarray:
        import cv2  # deferred: keeps manifest parsing importable without OpenCV

        path = self.resolve_file(record)
        image = cv2.imread(str(path), cv2.IMREAD_GRAYSCALE)
        if image is None:
            raise ManifestError(f"cannot read image {path}")
        return image


@dataclass(frozen=True)
class Finding:
    severity: Literal["error", "warning"]
    entity: str  # e.g. "annotation 12", "image 3"
    rule: str
    message: str


# --------------------------------------------------------------------------
# COCO-format parse / serialize
# --------------------------------------------------------------------------


def _parse_segmentation(raw, ann_id: int) -> Segmentation:
    if isinstance(raw, dict):
        return RLEMask.from_coco(raw)
    if isinstance(raw, list):
        if raw and all(isinstance(v, (int, float)) for v in raw):
            raw = [raw]
        try:
            return [Polygon.from_flat(part) for part in raw]
        except GeometryError as exc:
            raise ManifestError(f"annotation {ann_id}: {exc}") from exc
    raise ManifestError(f"annotation {ann_id}: unsupported segmentation {type(raw).__name__}")


def _segmentation_to_coco(seg: Segmentation):
    if isinstance(seg, RLEMask):
        return seg.to_coco()
    return [p.to_flat() for p in seg]


def annotation_to_coco(a: Annotation) -> dict:
    return {
        "id": a.annotation_id,
        "image_id": a.image_id,
        "category_id": a.category_id,
        "segmentation": _segmentation_to_coco(a.segmentation),
        "bbox": a.bbox.to_list(),
        "area": float(a.area),
        "iscrowd": a.iscrowd,
    }


def annotation_from_coco(obj: dict) -> Annotation:
    ann_id = int(obj["id"])
    return Annotation(
        annotation_id=ann_id,
        image_id=int(obj["image_id"]),
        category_id=int(obj["category_id"]),
        segmentation=_parse_segmentation(obj["segmentation"], ann_id),
        bbox=BBox.from_list(obj["bbox"]),
        area=float(obj["area"]),
        iscrowd=int(obj.get("iscrowd", 0)),
    )


def parse_coco_manifest(raw: bytes | str | Path) -> DatasetManifest:
    """Parse a COCO-format annotation document into a validated manifest.

    Accepts raw bytes/str or a filesystem path.  Raises
    ``ManifestParseError`` with a byte offset for malformed JSON and
    ``ManifestError`` naming the offending ids for dangling references.
    """
    base_dir: Path | None = None
    if isinstance(raw, Path):
        base_dir = raw.parent
        raw = raw.read_bytes()
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"malformed COCO document: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(doc, dict):
        raise ManifestParseError("top level of a COCO document must be an object")

    try:
        images_raw = doc["images"]
        annotations_raw = doc["annotations"]
        categories_raw = doc["categories"]
    except KeyError as exc:
        raise ManifestParseError(f"missing top-level key {exc.args[0]!r}") from exc

    categories = []
    for c in categories_raw:
        role = c.get("supercategory")
        if role not in (HEAT_LOSS, OBSTRUCTIVE):
            name = c.get("name", "")
            if name not in _DEFAULT_ROLES:
                raise ManifestError(
                    f"category {name!r} carries no role and is not a known default class"
                )
            role = _DEFAULT_ROLES[name]
        categories.append(Category(int(c["id"]), str(c["name"]), role))
    table = CategoryTable(categories)

    images = [
        ImageRecord(
            image_id=int(i["id"]),
            file_ref=str(i.get("file_name", i.get("file_ref", ""))),
            width=int(i["width"]),
            height=int(i["height"]),
        )
        for i in images_raw
    ]

    annotations = []
    for a in annotations_raw:
        try:
            annotations.append(annotation_from_coco(a))
        except GeometryError as exc:
            raise ManifestError(f"annotation {a.get('id')}: {exc}") from exc

    split_tag = (doc.get("info") or {}).get("split", "train")
    if split_tag not in ("train", "test", "evaluation"):
        raise ManifestError(f"unknown split tag {split_tag!r}")

    manifest = DatasetManifest(
        images=images,
        annotations=annotations,
        categories=table,
        split_tag=split_tag,
        base_dir=base_dir,
    )
    _check_references(manifest)
    return manifest


def manifest_to_coco(manifest: DatasetManifest) -> dict:
    """Serialize a manifest back to a COCO-format dict."""
    return {
        "info": {"split": manifest.split_tag},
        "images": [
            {"id": r.image_id, "file_name": r.file_ref, "width": r.width, "height": r.height}
            for r in manifest.images
        ],
        "annotations": [annotation_to_coco(a) for a in manifest.annotations],
        "categories": [
            {"id": c.category_id, "name": c.name, "supercategory": c.role}
            for c in manifest.categories
        ],
    }


def save_manifest(manifest: DatasetManifest, path: Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest_to_coco(manifest)))


def _check_references(manifest: DatasetManifest) -> None:
    image_ids = {r.image_id for r in manifest.images}
    if len(image_ids) != len(manifest.images):
        raise ManifestError("duplicate image ids")
    seen_ann: set[int] = set()
    dangling_images: list[int] = []
    dangling_categories: list[int] = []
    for a in manifest.annotations:
        if a.annotation_id in seen_ann:
            raise ManifestError(f"duplicate annotation id {a.annotation_id}")
        seen_ann.add(a.annotation_id)
        if a.image_id not in image_ids:
            dangling_images.append(a.annotation_id)
        if a.category_id not in manifest.categories:
            dangling_categories.append(a.annotation_id)
    problems = []
    if dangling_images:
        problems.append(f"annotations with unknown image_id: {sorted(dangling_images)}")
    if dangling_categories:
        problems.append(f"annotations with unknown category_id: {sorted(dangling_categories)}")
    if problems:
        raise ManifestError("; ".join(problems))


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


def validate_manifest(
    manifest: DatasetManifest,
    check_files: bool = False,
    check_geometry: bool = True,
) -> list[Finding]:
    """Check every manifest invariant; findings are data, not exceptions.

    ``check_files`` additionally requires every image file_ref to resolve
    on disk (off by default: annotation-only documents are legal inputs
    for bookkeeping workflows).
    """
    findings: list[Finding] = []
    images = {r.image_id: r for r in manifest.images}

    if len(images) != len(manifest.images):
        findings.append(Finding("error", "manifest", "duplicate_image_id", "duplicate image ids"))

    seen: set[int] = set()
    for a in manifest.annotations:
        entity = f"annotation {a.annotation_id}"
        if a.annotation_id in seen:
            findings.append(
                Finding("error", entity, "duplicate_annotation_id", "annotation id reused")
            )
        seen.add(a.annotation_id)
        if a.image_id not in images:
            findings.append(
                Finding("error", entity, "dangling_image_ref", f"unknown image {a.image_id}")
            )
            continue
        if a.category_id not in manifest.categories:
            findings.append(
                Finding(
                    "error", entity, "dangling_category_ref", f"unknown category {a.category_id}"
                )
            )
            continue
        rec = images[a.image_id]
        if a.iscrowd not in (0, 1):
            findings.append(
                Finding("error", entity, "bad_iscrowd", f"iscrowd must be 0/1, got {a.iscrowd}")
            )
        eps = 1e-6
        if a.bbox.x < -eps or a.bbox.y < -eps or a.bbox.x2 > rec.width + eps or a.bbox.y2 > rec.height + eps:
            findings.append(
                Finding(
                    "error",
                    entity,
                    "bbox_out_of_bounds",
                    f"bbox {a.bbox.to_list()} outside {rec.width}x{rec.height}",
                )
            )
        if check_geometry:
            findings.extend(_geometry_findings(a, rec))

    if check_files:
        for rec in manifest.images:
            if not manifest.resolve_file(rec).exists():
                findings.append(
                    Finding(
                        "error",
                        f"image {rec.image_id}",
                        "file_missing",
                        f"file_ref {rec.file_ref!r} does not resolve",
                    )
                )
    return findings


def _geometry_findings(a: Annotation, rec: ImageRecord) -> list[Finding]:
    entity = f"annotation {a.annotation_id}"
    findings: list[Finding] = []
    try:
        mask = a.rasterize(rec.width, rec.height)
    except GeometryError as exc:
        return [Finding("error", entity, "bad_segmentation", str(exc))]
    pixel_area = int(mask.sum())
    if pixel_area == 0:
        return [Finding("error", entity, "empty_mask", "segmentation rasterizes to nothing")]
    tight = mask_to_bbox(mask)
    for name, got, want in (
        ("x", a.bbox.x, tight.x),
        ("y", a.bbox.y, tight.y),
        ("x2", a.bbox.x2, tight.x2),
        ("y2", a.bbox.y2, tight.y2),
    ):
        if abs(got - want) > BBOX_TOLERANCE_PX:
            findings.append(
                Finding(
                    "error",
                    entity,
                    "bbox_mismatch",
                    f"bbox edge {name}={got:.2f} vs rasterized {want:.2f}",
                )
            )
            break
    if abs(a.area - pixel_area) > AREA_RTOL * pixel_area:
        findings.append(
            Finding(
                "error",
                entity,
                "area_mismatch",
                f"declared area {a.area:.1f} vs rasterized {pixel_area}",
            )
        )
    return findings


# --------------------------------------------------------------------------
# Bookkeeping and splits
# --------------------------------------------------------------------------


def compute_instance_counts(manifest: DatasetManifest) -> dict[str, int]:
    """Instance count per category name (zero-count classes included)."""
    counts = {c.name: 0 for c in manifest.categories}
    for a in manifest.annotations:
        counts[manifest.categories.by_id(a.category_id).name] += 1
    return counts


def split_by_fraction(
    manifest: DatasetManifest, fraction: float, seed: int
) -> DatasetManifest:
    """Deterministic, stratified, nested image-level subset.

    Images are ranked once per (manifest, seed) by a greedy pass that
    keeps the cumulative per-category instance shares close to the full
    manifest's shares; a fraction-f subset is the first round(f * N)
    images of that ranking, so subsets nest across fractions.
    """
    if not (0.0 < fraction <= 1.0):
        raise ManifestError(f"fraction must be in (0, 1], got {fraction}")
    if not manifest.images:
        raise ManifestError("cannot split an empty manifest")
    if fraction == 1.0:
        return manifest

    order = _stratified_order(manifest, seed)
    k = min(len(order), max(1, int(round(fraction * len(order)))))
    keep = set(order[:k])

    images = [r for r in manifest.images if r.image_id in keep]
    annotations = [a for a in manifest.annotations if a.image_id in keep]
    return DatasetManifest(
        images=images,
        annotations=annotations,
        categories=manifest.categories,
        split_tag=manifest.split_tag,
        base_dir=manifest.base_dir,
    )


def _stratified_order(manifest: DatasetManifest, seed: int) -> list[int]:
    cat_ids = [c.category_id for c in manifest.categories]
    cat_index = {cid: i for i, cid in enumerate(cat_ids)}
    n_cat = len(cat_ids)

    per_image = {r.image_id: np.zeros(n_cat) for r in manifest.images}
    for a in manifest.annotations:
        if a.image_id in per_image and a.category_id in cat_index:
            per_image[a.image_id][cat_index[a.category_id]] += 1

    totals = sum(per_image.values())
    grand = totals.sum()
    target = totals / grand if grand > 0 else np.zeros(n_cat)

    rng = np.random.default_rng(seed)
    ids = [r.image_id for r in manifest.images]
    candidates = [ids[i] for i in rng.permutation(len(ids))]
    vectors = np.stack([per_image[i] for i in candidates])

    order: list[int] = []
    cum = np.zeros(n_cat)
    alive = np.ones(len(candidates), dtype=bool)
    for _ in range(len(candidates)):
        trial = cum + vectors  # (N, C)
        trial_total = trial.sum(axis=1)
        shares = trial / np.maximum(trial_total, 1.0)[:, None]
        imbalance = np.abs(shares - target).sum(axis=1)
        imbalance[~alive] = np.inf
        pick = int(np.argmin(imbalance))
        alive[pick] = False
        cum = cum + vectors[pick]
        order.append(candidates[pick])
    return order
