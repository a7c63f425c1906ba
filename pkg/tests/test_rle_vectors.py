"""The shared RLE test-vector file must agree with the codec bit-for-bit.

The browser client checks the same file with its own decoder, so this
file is the cross-component contract.
"""

import json
from pathlib import Path

import numpy as np

from thermoseg.geometry import RLEMask, mask_to_rle, rle_to_mask

VECTORS_PATH = Path(__file__).resolve().parent.parent / "shared" / "rle_test_vectors.json"


def load_vectors():
    return json.loads(VECTORS_PATH.read_text())["vectors"]


def mask_from_bits(bits: str, width: int, height: int) -> np.ndarray:
    values = np.array([c == "1" for c in bits], dtype=bool)
    return values.reshape(height, width)  # row-major


def test_vector_file_exists_with_vectors():
    vectors = load_vectors()
    assert len(vectors) >= 10


def test_decode_matches_bits():
    for vec in load_vectors():
        rle = RLEMask(width=vec["width"], height=vec["height"], counts=tuple(vec["counts"]))
        decoded = rle_to_mask(rle)
        expected = mask_from_bits(vec["bits_row_major"], vec["width"], vec["height"])
        assert np.array_equal(decoded, expected), vec["name"]
        assert int(decoded.sum()) == vec["foreground"], vec["name"]


def test_encode_matches_counts():
    for vec in load_vectors():
        mask = mask_from_bits(vec["bits_row_major"], vec["width"], vec["height"])
        assert list(mask_to_rle(mask).counts) == vec["counts"], vec["name"]


def test_foreground_equals_odd_run_sum():
    for vec in load_vectors():
        assert sum(vec["counts"][1::2]) == vec["foreground"], vec["name"]
