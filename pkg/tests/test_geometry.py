import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoseg.errors import CorruptDataError, InvalidGeometryError, ShapeError
from protoseg.geometry import (
    BBox,
    BinaryMask,
    InstanceAnnotation,
    Scene,
    box_area,
    box_iou,
    mask_iou,
    rle_decode,
    rle_encode,
    rle_roundtrip,
)


@pytest.mark.parametrize(
    "coords, expected",
    [((0, 0, 10, 10), 100.0), ((0, 0, 1, 1), 1.0), ((2.5, 3.0, 7.5, 9.0), 30.0)],
)
def test_box_area(coords, expected):
    assert box_area(BBox(*coords)) == expected


@pytest.mark.parametrize("coords", [(0, 0, 0, 5), (3, 0, 1, 5), (0, 0, float("nan"), 1), (0, 0, 1, float("inf"))])
def test_degenerate_box_rejected(coords):
    with pytest.raises(InvalidGeometryError):
        BBox(*coords)


def test_box_iou_examples():
    a = BBox(0, 0, 10, 10)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, BBox(20, 20, 30, 30)) == 0.0
    assert box_iou(a, BBox(5, 0, 15, 10)) == pytest.approx(50 / 150, abs=1e-15)
    # touching edges share no area
    assert box_iou(a, BBox(10, 0, 20, 10)) == 0.0


boxes = st.tuples(
    st.floats(-100, 100), st.floats(-100, 100), st.floats(0.01, 50), st.floats(0.01, 50)
).map(lambda t: BBox(t[0], t[1], t[0] + t[2], t[1] + t[3]))


@given(boxes, boxes)
def test_box_iou_symmetric_and_bounded(a, b):
    assert box_iou(a, b) == box_iou(b, a)
    assert 0.0 <= box_iou(a, b) <= 1.0
    assert box_iou(a, a) == 1.0


@given(st.integers(-1000, 1000), st.integers(-1000, 1000), st.integers(1, 100), st.integers(1, 100),
       st.integers(-10**6, 10**6), st.integers(-10**6, 10**6))
def test_box_area_translation_invariant(x, y, w, h, dx, dy):
    assert box_area(BBox(x, y, x + w, y + h)) == box_area(BBox(x + dx, y + dy, x + w + dx, y + h + dy))


def _mask(rows):
    return BinaryMask(np.array(rows, dtype=np.uint8))


def test_mask_iou_examples():
    a = _mask([[1, 1, 0, 0], [1, 1, 0, 0]])
    assert mask_iou(a, a) == 1.0
    assert mask_iou(a, _mask([[0, 0, 1, 1], [0, 0, 1, 1]])) == 0.0
    shifted = _mask([[0, 1, 1, 0], [0, 1, 1, 0]])
    assert mask_iou(a, shifted) == 2 / 6
    empty = BinaryMask.zeros(4, 2)
    assert mask_iou(empty, empty) == 1.0


def test_mask_iou_shape_mismatch():
    with pytest.raises(ShapeError):
        mask_iou(BinaryMask.zeros(3, 3), BinaryMask.zeros(4, 3))


def test_mask_iou_complement_is_zero():
    rng = np.random.default_rng(5)
    bits = rng.random((7, 9)) > 0.4
    assert mask_iou(BinaryMask(bits), BinaryMask(~bits)) == 0.0
    other = BinaryMask(rng.random((7, 9)) > 0.5)
    assert mask_iou(BinaryMask(bits), other) == mask_iou(other, BinaryMask(bits))


def test_rle_small_cases():
    assert rle_encode(BinaryMask.zeros(2, 2)) == [4]
    ones = BinaryMask(np.ones((2, 2), dtype=bool))
    assert rle_encode(ones) == [0, 4]
    assert rle_roundtrip(ones) == ones
    assert rle_encode(_mask([[0, 1, 1], [0, 0, 1]])) == [1, 2, 2, 1]


def test_rle_roundtrip_seeded():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        h, w = rng.integers(1, 20, size=2)
        density = rng.random()
        m = BinaryMask(rng.random((h, w)) < density)
        assert rle_roundtrip(m) == m


@settings(max_examples=200)
@given(st.integers(1, 12), st.integers(1, 12), st.data())
def test_rle_bijection(h, w, data):
    bits = data.draw(st.lists(st.booleans(), min_size=h * w, max_size=h * w))
    m = BinaryMask(np.array(bits).reshape(h, w))
    counts = rle_encode(m)
    assert sum(counts) == h * w
    assert all(c > 0 for c in counts[1:])
    assert rle_decode(counts, w, h) == m


def test_rle_decode_rejects_wrong_total():
    with pytest.raises(CorruptDataError):
        rle_decode([3], 2, 2)
    with pytest.raises(CorruptDataError):
        rle_decode([2, -1, 3], 2, 2)


def test_values_are_immutable():
    m = BinaryMask.zeros(3, 3)
    with pytest.raises(ValueError):
        m.bits[0, 0] = True
    inst = InstanceAnnotation(0, BBox(0, 0, 2, 2), m)
    assert inst.area == 4.0
    with pytest.raises(Exception):
        inst.class_id = 3


def test_scene_checks_mask_dimensions():
    inst = InstanceAnnotation(0, BBox(0, 0, 2, 2), BinaryMask.zeros(3, 3))
    Scene("ok", 3, 3, (inst,))
    with pytest.raises(ShapeError):
        Scene("bad", 4, 3, (inst,))


def test_mask_from_box_uses_pixel_centers():
    m = BinaryMask.from_box(BBox(1, 1, 5, 5), 8, 8)
    assert m.count == 16
    assert m.bits[1:5, 1:5].all()
