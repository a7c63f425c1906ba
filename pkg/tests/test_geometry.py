import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermoseg.geometry import (
    BBox,
    EmptyMaskError,
    GeometryError,
    Polygon,
    RLECodecError,
    RLEMask,
    mask_to_bbox,
    mask_to_rle,
    polygon_to_mask,
    rle_to_mask,
)


def brute_force_rasterize(points: np.ndarray, width: int, height: int) -> np.ndarray:
    """Per-pixel even-odd scan; crossings strictly right of the center."""
    mask = np.zeros((height, width), dtype=bool)
    n = len(points)
    for row in range(height):
        yc = row + 0.5
        for col in range(width):
            xc = col + 0.5
            crossings = 0
            for i in range(n):
                x1, y1 = points[i]
                x2, y2 = points[(i + 1) % n]
                if (y1 <= yc < y2) or (y2 <= yc < y1):
                    x_cross = x1 + (yc - y1) * (x2 - x1) / (y2 - y1)
                    if x_cross > xc:
                        crossings += 1
            mask[row, col] = crossings % 2 == 1
    return mask


class TestBBox:
    def test_rejects_non_positive_extent(self):
        with pytest.raises(GeometryError):
            BBox(0, 0, 0, 5)
        with pytest.raises(GeometryError):
            BBox(0, 0, 5, -1)

    def test_scaled_round_trip(self):
        b = BBox(3.0, 4.0, 10.0, 6.0)
        fwd = b.scaled(2.0, 7.0, 1.0)
        assert fwd.to_list() == [13.0, 9.0, 20.0, 12.0]

    def test_clipped(self):
        b = BBox(-5, -5, 20, 20).clipped(12, 12)
        assert b.to_list() == [0, 0, 12, 12]
        with pytest.raises(GeometryError):
            BBox(50, 50, 5, 5).clipped(12, 12)


class TestPolygon:
    def test_needs_three_vertices(self):
        with pytest.raises(GeometryError):
            Polygon(np.array([[0, 0], [1, 1]]))

    def test_zero_area_rejected(self):
        with pytest.raises(GeometryError):
            Polygon(np.array([[0, 0], [1, 1], [2, 2]]))

    def test_area_and_flat_round_trip(self):
        p = Polygon.from_flat([0, 0, 4, 0, 4, 3, 0, 3])
        assert p.area == 12.0
        assert Polygon.from_flat(p.to_flat()) == p


class TestRLE:
    def test_all_zero(self):
        assert mask_to_rle(np.zeros((3, 3), bool)).counts == (9,)

    def test_all_one(self):
        assert mask_to_rle(np.ones((3, 3), bool)).counts == (0, 9)

    def test_column_major_order(self):
        mask = np.zeros((2, 3), dtype=bool)
        mask[1, 0] = True  # second pixel in column-major order
        assert mask_to_rle(mask).counts == (1, 1, 4)

    def test_sum_mismatch_rejected(self):
        with pytest.raises(RLECodecError):
            RLEMask(width=3, height=3, counts=(4, 4))

    def test_negative_count_rejected(self):
        with pytest.raises(RLECodecError):
            RLEMask(width=1, height=3, counts=(-1, 4))

    def test_round_trip_1000_random_masks(self, rng):
        for _ in range(1000):
            h = int(rng.integers(1, 24))
            w = int(rng.integers(1, 24))
            mask = rng.random((h, w)) < rng.uniform(0.05, 0.95)
            restored = rle_to_mask(mask_to_rle(mask))
            assert np.array_equal(restored, mask)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_round_trip_property(self, seed):
        rng = np.random.default_rng(seed)
        mask = rng.random((int(rng.integers(1, 16)), int(rng.integers(1, 16)))) < 0.5
        assert np.array_equal(rle_to_mask(mask_to_rle(mask)), mask)

    def test_coco_round_trip(self):
        rle = RLEMask(width=3, height=2, counts=(1, 2, 3))
        assert RLEMask.from_coco(rle.to_coco()) == rle


class TestMaskToBBox:
    def test_single_pixel(self):
        mask = np.zeros((10, 10), bool)
        mask[7, 5] = True
        assert mask_to_bbox(mask).to_list() == [5, 7, 1, 1]

    def test_full_mask(self):
        assert mask_to_bbox(np.ones((4, 6), bool)).to_list() == [0, 0, 6, 4]

    def test_empty_mask_raises(self):
        with pytest.raises(EmptyMaskError):
            mask_to_bbox(np.zeros((4, 4), bool))

    def test_matches_scan_oracle(self, rng):
        for _ in range(50):
            mask = rng.random((15, 11)) < 0.3
            if not mask.any():
                continue
            box = mask_to_bbox(mask)
            ys, xs = np.nonzero(mask)
            assert box.to_list() == [
                xs.min(),
                ys.min(),
                xs.max() - xs.min() + 1,
                ys.max() - ys.min() + 1,
            ]


class TestRasterization:
    def test_axis_aligned_rectangle(self):
        rect = Polygon(np.array([[0, 0], [10, 0], [10, 10], [0, 10]], float))
        assert polygon_to_mask(rect, 20, 20).sum() == 100

    def test_polygon_outside_canvas(self):
        poly = Polygon(np.array([[50, 50], [60, 50], [60, 60], [50, 60]], float))
        assert polygon_to_mask(poly, 20, 20).sum() == 0

    def test_triangle_matches_brute_force(self):
        tri = Polygon(np.array([[0, 0], [4, 0], [0, 4]], float))
        mask = polygon_to_mask(tri, 8, 8)
        assert np.array_equal(mask, brute_force_rasterize(tri.points, 8, 8))
        assert mask.sum() == 6

    def test_degenerate_raises(self):
        with pytest.raises(GeometryError):
            polygon_to_mask([], 8, 8)

    def test_random_polygons_match_brute_force(self, rng):
        for _ in range(60):
            n = int(rng.integers(3, 9))
            points = rng.uniform(-2, 18, size=(n, 2))
            try:
                poly = Polygon(points)
            except GeometryError:
                continue
            fast = polygon_to_mask(poly, 16, 14)
            slow = brute_force_rasterize(poly.points, 16, 14)
            assert np.array_equal(fast, slow)

    def test_multi_part_union(self):
        a = Polygon(np.array([[0, 0], [3, 0], [3, 3], [0, 3]], float))
        b = Polygon(np.array([[5, 5], [8, 5], [8, 8], [5, 8]], float))
        mask = polygon_to_mask([a, b], 10, 10)
        assert mask.sum() == 18

    def test_convex_area_bound(self, rng):
        # |rasterized - shoelace| <= perimeter for convex polygons
        import cv2

        for _ in range(40):
            pts = rng.uniform(2, 30, size=(8, 2)).astype(np.float32)
            hull = cv2.convexHull(pts).reshape(-1, 2).astype(np.float64)
            if len(hull) < 3:
                continue
            poly = Polygon(hull)
            raster = polygon_to_mask(poly, 32, 32).sum()
            assert abs(raster - poly.area) <= poly.perimeter
