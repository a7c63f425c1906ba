"""Geometric primitives shared across the workbench.

Boxes and polygons live in image coordinates: origin at the top-left
corner, x growing right, y growing down.  A pixel (row, col) covers the
unit square [col, col+1) x [row, row+1) and its center sits at
(col + 0.5, row + 0.5).  Binary masks are plain HxW boolean numpy arrays;
RLE masks use column-major (top-to-bottom, then left-to-right) scan order
with alternating background/foreground run lengths, starting with
background.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class GeometryError(ValueError):
    """Degenerate or inconsistent geometric input."""


class RLECodecError(GeometryError):
    """Run-length payload inconsistent with its declared canvas."""


class EmptyMaskError(GeometryError):
    """An operation that needs at least one foreground pixel got none."""


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner (x, y) plus extent (w, h)."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self) -> None:
        if not (self.w > 0 and self.h > 0):
            raise GeometryError(f"box extent must be positive, got w={self.w}, h={self.h}")

    @property
    def x2(self) -> float:
        return self.x + self.w

    @property
    def y2(self) -> float:
        return self.y + self.h

    @property
    def area(self) -> float:
        return self.w * self.h

    def scaled(self, scale: float, dx: float = 0.0, dy: float = 0.0) -> "BBox":
        """Apply the affine map p -> p * scale + (dx, dy)."""
        return BBox(self.x * scale + dx, self.y * scale + dy, self.w * scale, self.h * scale)

    def clipped(self, width: float, height: float) -> "BBox":
        """Intersect with the canvas [0, width) x [0, height)."""
        x1 = min(max(self.x, 0.0), width)
        y1 = min(max(self.y, 0.0), height)
        x2 = min(max(self.x2, 0.0), width)
        y2 = min(max(self.y2, 0.0), height)
        if x2 <= x1 or y2 <= y1:
            raise GeometryError(f"box {self.to_list()} lies outside a {width}x{height} canvas")
        return BBox(x1, y1, x2 - x1, y2 - y1)

    def to_list(self) -> list[float]:
        return [float(self.x), float(self.y), float(self.w), float(self.h)]

    @classmethod
    def from_list(cls, xywh) -> "BBox":
        if len(xywh) != 4:
            raise GeometryError(f"expected [x, y, w, h], got {xywh!r}")
        return cls(float(xywh[0]), float(xywh[1]), float(xywh[2]), float(xywh[3]))


@dataclass(frozen=True, eq=False)
class Polygon:
    """Simple polygon: ordered (x, y) vertices, at least 3, non-zero area."""

    points: np.ndarray  # (N, 2) float64

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise GeometryError(f"polygon points must be (N, 2), got shape {pts.shape}")
        if len(pts) < 3:
            raise GeometryError(f"polygon needs >= 3 vertices, got {len(pts)}")
        object.__setattr__(self, "points", pts)
        if self.signed_area() == 0.0:
            raise GeometryError("polygon has zero shoelace area")

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Polygon) and np.array_equal(self.points, other.points)

    def signed_area(self) -> float:
        x = self.points[:, 0]
        y = self.points[:, 1]
        return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))

    @property
    def area(self) -> float:
        return abs(self.signed_area())

    @property
    def perimeter(self) -> float:
        return float(np.sum(np.hypot(*(np.roll(self.points, -1, axis=0) - self.points).T)))

    def bounds(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax) of the vertices."""
        xmin, ymin = self.points.min(axis=0)
        xmax, ymax = self.points.max(axis=0)
        return float(xmin), float(ymin), float(xmax), float(ymax)

    def transformed(self, scale: float = 1.0, dx: float = 0.0, dy: float = 0.0) -> "Polygon":
        return Polygon(self.points * scale + np.array([dx, dy]))

    def affine(self, matrix: np.ndarray) -> "Polygon":
        """Apply a 2x3 affine matrix (as used by cv2.warpAffine)."""
        m = np.asarray(matrix, dtype=np.float64)
        return Polygon(self.points @ m[:, :2].T + m[:, 2])

    def to_flat(self) -> list[float]:
        """COCO-style flat vertex list [x1, y1, x2, y2, ...]."""
        return [float(v) for v in self.points.reshape(-1)]

    @classmethod
    def from_flat(cls, flat) -> "Polygon":
        arr = np.asarray(flat, dtype=np.float64)
        if arr.size % 2 != 0:
            raise GeometryError(f"flat vertex list has odd length {arr.size}")
        return cls(arr.reshape(-1, 2))


@dataclass(frozen=True)
class RLEMask:
    """Column-major run-length encoded binary mask."""

    width: int
    height: int
    counts: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.counts)
        object.__setattr__(self, "counts", counts)
        if any(c < 0 for c in counts):
            raise RLECodecError(f"negative run length in {counts[:8]}...")
        total = sum(counts)
        if total != self.width * self.height:
            raise RLECodecError(
                f"run lengths sum to {total}, canvas is {self.width}x{self.height}"
                f" = {self.width * self.height}"
            )

    @property
    def foreground_area(self) -> int:
        return sum(self.counts[1::2])

    def to_coco(self) -> dict:
        return {"size": [self.height, self.width], "counts": list(self.counts)}

    @classmethod
    def from_coco(cls, obj: dict) -> "RLEMask":
        try:
            h, w = obj["size"]
            counts = obj["counts"]
        except (KeyError, TypeError, ValueError) as exc:
            raise RLECodecError(f"malformed RLE object: {obj!r}") from exc
        return cls(width=int(w), height=int(h), counts=tuple(int(c) for c in counts))


def mask_to_rle(mask: np.ndarray) -> RLEMask:
    """Encode a boolean HxW mask as alternating column-major run lengths."""
    m = np.asarray(mask, dtype=bool)
    if m.ndim != 2:
        raise GeometryError(f"mask must be 2-D, got shape {m.shape}")
    h, w = m.shape
    flat = m.ravel(order="F")
    if flat.size == 0:
        return RLEMask(width=w, height=h, counts=())
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    edges = np.concatenate(([0], changes, [flat.size]))
    runs = np.diff(edges).tolist()
    if flat[0]:
        runs = [0] + runs
    return RLEMask(width=w, height=h, counts=tuple(runs))


def rle_to_mask(rle: RLEMask) -> np.ndarray:
    """Decode run lengths back to a boolean HxW mask (exact inverse)."""
    values = np.zeros(len(rle.counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(rle.counts, dtype=np.int64))
    return flat.reshape((rle.height, rle.width), order="F")


def mask_to_bbox(mask: np.ndarray) -> BBox:
    """Tight integer-aligned bounding box of the set pixels."""
    m = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(m.any(axis=1))
    if rows.size == 0:
        raise EmptyMaskError("cannot take the bounding box of an empty mask")
    cols = np.flatnonzero(m.any(axis=0))
    y0, y1 = int(rows[0]), int(rows[-1]) + 1
    x0, x1 = int(cols[0]), int(cols[-1]) + 1
    return BBox(float(x0), float(y0), float(x1 - x0), float(y1 - y0))


def polygon_to_mask(polygon: Polygon | list[Polygon], width: int, height: int) -> np.ndarray:
    """Rasterize a polygon (or the union of several parts) onto a canvas.

    A pixel is set iff its center lies inside the polygon under the
    even-odd rule; ties on edges resolve by counting only crossings
    strictly to the right of the center.  Vertices may lie outside the
    canvas; only on-canvas pixels are produced.
    """
    if width <= 0 or height <= 0:
        raise GeometryError(f"canvas must be positive, got {width}x{height}")
    parts = [polygon] if isinstance(polygon, Polygon) else list(polygon)
    if not parts:
        raise GeometryError("no polygon parts to rasterize")
    mask = np.zeros((height, width), dtype=bool)
    for part in parts:
        _rasterize_ring(part.points, mask)
    return mask


def _rasterize_ring(points: np.ndarray, mask: np.ndarray) -> None:
    height, width = mask.shape
    x1 = points[:, 0]
    y1 = points[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    centers = np.arange(width, dtype=np.float64) + 0.5

    ymin = float(y1.min())
    ymax = float(y1.max())
    r0 = max(0, int(np.floor(ymin - 0.5)))
    r1 = min(height - 1, int(np.ceil(ymax)))
    for r in range(r0, r1 + 1):
        yc = r + 0.5
        crossing = ((y1 <= yc) & (yc < y2)) | ((y2 <= yc) & (yc < y1))
        if not crossing.any():
            continue
        xs = x1[crossing] + (yc - y1[crossing]) * (x2[crossing] - x1[crossing]) / (
            y2[crossing] - y1[crossing]
        )
        xs.sort()
        # strictly-greater crossings: total minus count of (xs <= center)
        n_le = np.searchsorted(xs, centers, side="right")
        mask[r] |= (len(xs) - n_le) % 2 == 1
