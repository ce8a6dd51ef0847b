import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_force_raster, random_mask_scene
from protoseg.errors import (
    CorruptDataError,
    InputError,
    InvalidPolygonError,
    ParseError,
    SchemaError,
    ValidationError,
)
from protoseg.geometry import BinaryMask, mask_iou
from protoseg.ingest import import_coco_subset, parse_scene_file, rasterize_polygon, write_scene_file


def test_square_rasterization():
    m = rasterize_polygon([(1, 1), (5, 1), (5, 5), (1, 5)], 8, 8)
    assert m.count == 16
    assert m.bits[1:5, 1:5].all()


def test_triangle_matches_brute_force():
    tri = [(0, 0), (8, 0), (0, 8)]
    m = rasterize_polygon(tri, 8, 8)
    expected = brute_force_raster(tri, 8, 8)
    assert m.count == int(expected.sum())
    assert np.array_equal(m.bits, expected)


def test_collinear_polygon_is_empty():
    assert rasterize_polygon([(0, 0), (4, 4), (8, 8)], 8, 8).count == 0


def test_polygon_errors():
    with pytest.raises(InvalidPolygonError):
        rasterize_polygon([(0, 0), (1, 1)], 4, 4)
    with pytest.raises(ValidationError):
        rasterize_polygon([(0, 0), (1, float("nan")), (2, 0)], 4, 4)


def test_vertex_order_does_not_matter():
    rng = np.random.default_rng(8)
    pts = [tuple(p) for p in rng.uniform(-2, 22, size=(7, 2))]
    a = rasterize_polygon(pts, 20, 20)
    assert rasterize_polygon(pts[::-1], 20, 20) == a
    assert rasterize_polygon(pts[3:] + pts[:3], 20, 20) == a


def test_rasterizer_equals_brute_force_on_random_polygons():
    rng = np.random.default_rng(77)
    for _ in range(100):
        n = int(rng.integers(3, 12))
        w, h = (int(v) for v in rng.integers(4, 24, size=2))
        pts = [tuple(p) for p in rng.uniform(-3, max(w, h) + 3, size=(n, 2))]
        assert np.array_equal(rasterize_polygon(pts, w, h).bits, brute_force_raster(pts, w, h))


def _scene_doc(instances, width=10, height=10, sid="a"):
    return {"version": 1, "scenes": [{"id": sid, "width": width, "height": height, "instances": instances}]}


def test_parse_empty_file():
    assert parse_scene_file(b'{"version":1,"scenes":[]}') == []


def test_parse_single_scene():
    doc = _scene_doc([{"class_id": 0, "bbox": [0, 0, 10, 10], "rle": [0, 100]}])
    (scene,) = parse_scene_file(json.dumps(doc).encode())
    assert len(scene.instances) == 1
    assert scene.instances[0].area == 100.0
    assert scene.instances[0].mask.count == 100


def test_parse_rejects_bad_rle():
    doc = _scene_doc([{"class_id": 0, "bbox": [0, 0, 10, 10], "rle": [0, 99]}])
    with pytest.raises(CorruptDataError):
        parse_scene_file(json.dumps(doc))


def test_parse_reports_location_of_syntax_errors():
    with pytest.raises(ParseError) as info:
        parse_scene_file(b'{"version": 1,\n "scenes": [}')
    assert info.value.line == 2


@pytest.mark.parametrize(
    "instance, error",
    [
        ({"class_id": 0, "bbox": [0, 0, 0, 10], "rle": [100]}, ValidationError),
        ({"class_id": -1, "bbox": [0, 0, 5, 5], "rle": [100]}, ValidationError),
        ({"class_id": 0, "bbox": [0, 0, 5], "rle": [100]}, ValidationError),
        ({"bbox": [0, 0, 5, 5], "rle": [100]}, SchemaError),
    ],
)
def test_parse_validation_errors(instance, error):
    with pytest.raises(error) as info:
        parse_scene_file(json.dumps(_scene_doc([instance])))
    if error is ValidationError:
        assert info.value.scene_id == "a" and info.value.instance_index == 0


def test_parse_class_range_check():
    doc = _scene_doc([{"class_id": 3, "bbox": [0, 0, 5, 5], "rle": [100]}])
    parse_scene_file(json.dumps(doc))
    with pytest.raises(ValidationError):
        parse_scene_file(json.dumps(doc), num_classes=3)


def test_parse_rejects_wrong_version_and_duplicates():
    with pytest.raises(SchemaError):
        parse_scene_file('{"version":2,"scenes":[]}')
    dup = {"version": 1, "scenes": [{"id": "x", "width": 2, "height": 2, "instances": []}] * 2}
    with pytest.raises(ValidationError):
        parse_scene_file(json.dumps(dup))


def test_scene_file_roundtrip_fuzzed():
    rng = np.random.default_rng(99)
    scenes = [random_mask_scene(rng, f"scene-{i}") for i in range(1000)]
    back = parse_scene_file(write_scene_file(scenes))
    assert len(back) == len(scenes)
    for a, b in zip(scenes, back):
        assert (a.id, a.width, a.height, len(a)) == (b.id, b.width, b.height, len(b))
        for ia, ib in zip(a.instances, b.instances):
            assert ia.class_id == ib.class_id
            assert ia.mask == ib.mask
            assert tuple(round(v, 6) for v in ia.box.as_tuple()) == ib.box.as_tuple()
    # a second pass is an exact fixed point
    assert write_scene_file(back) == write_scene_file(parse_scene_file(write_scene_file(back)))


@settings(max_examples=300)
@given(st.binary(max_size=200))
def test_parse_never_returns_invalid_scenes(blob):
    try:
        scenes = parse_scene_file(blob)
    except InputError:
        return
    for s in scenes:
        for inst in s.instances:
            assert inst.area > 0 and inst.mask.width == s.width


json_values = st.recursive(
    st.none() | st.booleans() | st.integers(-5, 200) | st.floats(allow_nan=False) | st.text(max_size=3),
    lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.sampled_from(
        ["version", "scenes", "id", "width", "height", "instances", "class_id", "bbox", "rle"]), inner, max_size=6),
    max_leaves=25,
)


@settings(max_examples=300)
@given(json_values)
def test_structured_fuzz_yields_errors_or_valid_scenes(doc):
    try:
        scenes = parse_scene_file(json.dumps(doc))
    except InputError:
        return
    for s in scenes:
        assert s.width >= 1 and s.height >= 1
        for inst in s.instances:
            assert inst.box.x2 > inst.box.x1 and inst.box.y2 > inst.box.y1


def _coco(annotations, images=None):
    return json.dumps({
        "images": images if images is not None else [{"id": 7, "width": 16, "height": 16, "file_name": "x.jpg"}],
        "annotations": annotations,
        "categories": [{"id": 3, "name": "cat"}, {"id": 9, "name": "dog"}],
    })


def test_coco_empty():
    assert import_coco_subset(_coco([])).scenes == []


def test_coco_square_polygon():
    ann = {"image_id": 7, "category_id": 9, "bbox": [2, 3, 8, 6], "iscrowd": 0,
           "segmentation": [[2, 3, 10, 3, 10, 9, 2, 9]]}
    res = import_coco_subset(_coco([ann]))
    (scene,) = res.scenes
    inst = scene.instances[0]
    assert scene.id == "7" and inst.class_id == 1
    assert inst.box.as_tuple() == (2.0, 3.0, 10.0, 9.0)
    full = BinaryMask.from_box(inst.box, 16, 16)
    assert mask_iou(inst.mask, full) >= 0.9


def test_coco_skips_zero_width_bbox_rle_and_crowd():
    good = {"image_id": 7, "category_id": 3, "bbox": [0, 0, 4, 4], "segmentation": [[0, 0, 4, 0, 4, 4, 0, 4]]}
    flat = dict(good, bbox=[0, 0, 0, 4])
    rle = dict(good, segmentation={"counts": [1, 2], "size": [16, 16]})
    crowd = dict(good, iscrowd=1)
    res = import_coco_subset(_coco([good, flat, rle, crowd]))
    assert len(res.scenes) == 1 and len(res.scenes[0].instances) == 1
    assert (res.skipped_bbox, res.skipped_rle, res.skipped_crowd) == (1, 1, 1)
    assert len(res.warnings) == 3


def test_coco_whitelist_and_multipart_union():
    ann = {"image_id": 7, "category_id": 3, "bbox": [0, 0, 12, 4],
           "segmentation": [[0, 0, 4, 0, 4, 4, 0, 4], [8, 0, 12, 0, 12, 4, 8, 4]]}
    res = import_coco_subset(_coco([ann, dict(ann, category_id=9)]), class_whitelist=["cat"])
    assert res.skipped_class == 1
    assert res.scenes[0].instances[0].mask.count == 32


def test_coco_schema_errors():
    with pytest.raises(SchemaError):
        import_coco_subset(json.dumps({"images": [], "annotations": []}))
    with pytest.raises(SchemaError):
        import_coco_subset(_coco([{"image_id": 7, "bbox": [0, 0, 1, 1], "segmentation": []}]))
