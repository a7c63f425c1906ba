import numpy as np
import pytest

from thermoseg.geometry import BBox
from thermoseg.manifest import CategoryTable, ManifestError
from thermoseg.postprocess import (
    ConstantFill,
    LocalMedianFill,
    PostprocessError,
    crop_heat_loss,
    export_thermal_summary,
    partition_detections,
    remove_obstructive,
)
from thermoseg.predictions import InstancePrediction

TABLE = CategoryTable.default()


def pred(category_name, score, x, y, w, h, mask=None, canvas=(64, 64)):
    if mask is None:
        mask = np.zeros(canvas, dtype=bool)
        mask[int(y) : int(y + h), int(x) : int(x + w)] = True
    return InstancePrediction(
        image_id=1,
        category_id=TABLE.by_name(category_name).category_id,
        score=score,
        bbox=BBox(x, y, w, h),
        mask=mask,
    )


class TestPartition:
    def test_roles(self):
        preds = [pred("window", 0.9, 1, 1, 5, 5), pred("tree", 0.8, 10, 10, 5, 5),
                 pred("door", 0.7, 20, 20, 5, 5)]
        heat, obstructive = partition_detections(preds, TABLE)
        assert [p.category_id for p in heat] == [1, 2]
        assert [p.category_id for p in obstructive] == [4]

    def test_empty(self):
        assert partition_detections([], TABLE) == ([], [])

    def test_all_obstructive(self):
        preds = [pred("road", 0.5, 0, 50, 30, 10), pred("bin", 0.6, 5, 5, 4, 6)]
        heat, obstructive = partition_detections(preds, TABLE)
        assert heat == []
        assert len(obstructive) == 2

    def test_unknown_category_rejected(self):
        bad = InstancePrediction(image_id=1, category_id=99, score=0.5, bbox=BBox(0, 0, 4, 4))
        with pytest.raises(ManifestError):
            partition_detections([bad], TABLE)

    def test_partition_exhaustive_and_disjoint(self, rng):
        names = TABLE.names()
        preds = [
            pred(str(rng.choice(names)), float(rng.random()), 2, 2, 6, 6)
            for _ in range(30)
        ]
        heat, obstructive = partition_detections(preds, TABLE)
        assert len(heat) + len(obstructive) == len(preds)
        assert not (set(map(id, heat)) & set(map(id, obstructive)))


class TestCrops:
    def test_zero_padding_exact_subrectangle(self, rng):
        image = rng.integers(0, 255, (64, 64), dtype=np.uint8)
        crops = crop_heat_loss(image, [pred("window", 0.9, 10, 10, 20, 20)], TABLE, padding=0)
        crop = crops.crops[0]
        assert crop.pixels.shape == (20, 20)
        assert np.array_equal(crop.pixels, image[10:30, 10:30])
        assert crop.effective_padding == (0, 0, 0, 0)

    def test_corner_clipping_records_effective_padding(self, rng):
        image = rng.integers(0, 255, (64, 64), dtype=np.uint8)
        crops = crop_heat_loss(image, [pred("door", 0.9, 0, 0, 10, 10)], TABLE, padding=8)
        crop = crops.crops[0]
        assert crop.region.to_list() == [0, 0, 18, 18]
        assert crop.effective_padding == (0, 0, 8, 8)

    def test_crop_mean_matches_source_region(self, rng):
        image = rng.integers(0, 255, (64, 64), dtype=np.uint8)
        crops = crop_heat_loss(image, [pred("window", 0.9, 8, 4, 12, 16)], TABLE, padding=2)
        crop = crops.crops[0]
        x0, y0, w, h = [int(v) for v in crop.region.to_list()]
        assert crop.pixels.mean() == image[y0 : y0 + h, x0 : x0 + w].mean()

    def test_all_crops_fidelity(self, rng):
        image = rng.integers(0, 255, (64, 64), dtype=np.uint8)
        preds = [pred("window", 0.9, 5, 5, 10, 10), pred("door", 0.8, 30, 20, 8, 20)]
        for crop in crop_heat_loss(image, preds, TABLE, padding=3).crops:
            x0, y0, w, h = [int(v) for v in crop.region.to_list()]
            assert np.array_equal(crop.pixels, image[y0 : y0 + h, x0 : x0 + w])

    def test_obstructive_category_rejected(self, rng):
        image = rng.integers(0, 255, (64, 64), dtype=np.uint8)
        with pytest.raises(PostprocessError):
            crop_heat_loss(image, [pred("tree", 0.9, 5, 5, 10, 10)], TABLE)


class TestRemoveObstructive:
    def test_empty_list_is_identity(self, rng):
        image = rng.integers(0, 255, (32, 32), dtype=np.uint8)
        cleaned = remove_obstructive(image, [], TABLE)
        assert np.array_equal(cleaned.pixels, image)

    def test_constant_fill(self, rng):
        image = rng.integers(1, 255, (32, 32), dtype=np.uint8)
        p = pred("tree", 0.9, 4, 4, 8, 8, canvas=(32, 32))
        cleaned = remove_obstructive(image, [p], TABLE, fill=ConstantFill(0))
        assert (cleaned.pixels[p.mask] == 0).all()
        assert np.array_equal(cleaned.pixels[~p.mask], image[~p.mask])

    def test_local_median_on_constant_image(self):
        image = np.full((32, 32), 77, dtype=np.uint8)
        p = pred("bin", 0.9, 10, 10, 6, 6, canvas=(32, 32))
        cleaned = remove_obstructive(image, [p], TABLE, fill=LocalMedianFill(k=5))
        assert (cleaned.pixels == 77).all()

    def test_non_interference_bit_exact(self, rng):
        image = rng.integers(0, 255, (48, 48), dtype=np.uint8)
        preds = [pred("tree", 0.9, 4, 4, 10, 10, canvas=(48, 48)),
                 pred("road", 0.8, 0, 40, 48, 8, canvas=(48, 48))]
        union = np.zeros((48, 48), dtype=bool)
        for p in preds:
            union |= p.mask
        cleaned = remove_obstructive(image, preds, TABLE, fill=LocalMedianFill(k=7))
        assert np.array_equal(cleaned.pixels[~union], image[~union])

    def test_full_coverage_median_impossible(self):
        image = np.zeros((16, 16), dtype=np.uint8)
        mask = np.ones((16, 16), dtype=bool)
        p = pred("other", 0.9, 0, 0, 16, 16, mask=mask, canvas=(16, 16))
        with pytest.raises(PostprocessError):
            remove_obstructive(image, [p], TABLE, fill=LocalMedianFill(k=3))
        # constant fill still works
        cleaned = remove_obstructive(image, [p], TABLE, fill=ConstantFill(9))
        assert (cleaned.pixels == 9).all()

    def test_fully_masked_neighborhood_uses_global_median(self):
        image = np.full((31, 31), 50, dtype=np.uint8)
        image[0, 0] = 200  # global unmasked median dominated by 50s
        mask = np.zeros((31, 31), dtype=bool)
        mask[5:26, 5:26] = True  # 21x21 block, center window fully masked for k=11
        p = pred("tree", 0.9, 5, 5, 21, 21, mask=mask, canvas=(31, 31))
        cleaned = remove_obstructive(image, [p], TABLE, fill=LocalMedianFill(k=11))
        assert cleaned.pixels[15, 15] == 50

    def test_window_size_validation(self):
        with pytest.raises(PostprocessError):
            LocalMedianFill(k=4)


class TestThermalSummary:
    def test_constant_crop(self):
        from thermoseg.postprocess import Crop

        crop = Crop("window", BBox(0, 0, 4, 4), np.full((4, 4), 9, np.uint8), 0, (0, 0, 0, 0))
        summary = export_thermal_summary(crop)
        assert summary.min == summary.max == summary.mean == 9
        assert summary.std == 0

    def test_two_value_crop(self):
        from thermoseg.postprocess import Crop

        crop = Crop("door", BBox(0, 0, 2, 1), np.array([[10, 20]], np.uint8), 0, (0, 0, 0, 0))
        summary = export_thermal_summary(crop)
        assert summary.mean == 15
        assert summary.min == 10
        assert summary.max == 20

    def test_matches_direct_statistics(self, rng):
        from thermoseg.postprocess import Crop

        pixels = rng.integers(0, 255, (9, 13), dtype=np.uint8)
        crop = Crop("window", BBox(0, 0, 13, 9), pixels, 0, (0, 0, 0, 0))
        summary = export_thermal_summary(crop)
        flat = [float(v) for row in pixels for v in row]
        mean = sum(flat) / len(flat)
        var = sum((v - mean) ** 2 for v in flat) / len(flat)
        assert summary.mean == pytest.approx(mean)
        assert summary.std == pytest.approx(var**0.5)
        assert summary.min == min(flat)
        assert summary.max == max(flat)

    def test_empty_crop_rejected(self):
        from thermoseg.postprocess import Crop

        crop = Crop("window", BBox(0, 0, 1, 1), np.zeros((0, 0), np.uint8), 0, (0, 0, 0, 0))
        with pytest.raises(PostprocessError):
            export_thermal_summary(crop)
