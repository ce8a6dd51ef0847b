"""Scene dataset I/O: the native JSON format, polygon rasterization, COCO import."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import (
    CorruptDataError,
    InputError,
    InvalidPolygonError,
    ParseError,
    SchemaError,
    ValidationError,
)
from .geometry import BBox, BinaryMask, InstanceAnnotation, Scene, rle_decode, rle_encode

logger = logging.getLogger(__name__)

SCENE_FILE_VERSION = 1
COORD_DECIMALS = 6


def _load_json(data):
    if isinstance(data, (bytes, bytearray)):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"input is not UTF-8: {exc}") from None
    try:
        return json.loads(data)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, column=exc.colno, offset=exc.pos) from None


def _require(obj, key, kind, where):
    if not isinstance(obj, dict) or key not in obj:
        raise SchemaError(f"{where}: missing required key {key!r}")
    value = obj[key]
    if kind is int and isinstance(value, bool):
        raise SchemaError(f"{where}: {key!r} must be an integer")
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise SchemaError(f"{where}: {key!r} must be a number")
    elif not isinstance(value, kind):
        raise SchemaError(f"{where}: {key!r} must be {kind.__name__}")
    return value


def _round_coord(v: float) -> float:
    return round(float(v), COORD_DECIMALS)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "id": scene.id,
        "width": scene.width,
        "height": scene.height,
        "instances": [
            {
                "class_id": inst.class_id,
                "bbox": [_round_coord(v) for v in inst.box.as_tuple()],
                "rle": rle_encode(inst.mask),
            }
            for inst in scene.instances
        ],
    }


def scene_from_dict(obj, num_classes: Optional[int] = None) -> Scene:
    if not isinstance(obj, dict):
        raise SchemaError("scene entry must be an object")
    sid = _require(obj, "id", str, "scene")
    width = _require(obj, "width", int, f"scene {sid!r}")
    height = _require(obj, "height", int, f"scene {sid!r}")
    if width < 1 or height < 1:
        raise ValidationError(f"non-positive dimensions {width}x{height}", scene_id=sid)
    raw_instances = _require(obj, "instances", list, f"scene {sid!r}")
    instances = []
    for idx, raw in enumerate(raw_instances):
        where = f"scene {sid!r} instance {idx}"
        class_id = _require(raw, "class_id", int, where)
        bbox = _require(raw, "bbox", list, where)
        rle = _require(raw, "rle", list, where)
        if class_id < 0 or (num_classes is not None and class_id >= num_classes):
            raise ValidationError(f"class_id {class_id} out of range", sid, idx)
        if len(bbox) != 4 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox
        ):
            raise ValidationError("bbox must be four numbers [x1, y1, x2, y2]", sid, idx)
        if not all(isinstance(c, int) and not isinstance(c, bool) for c in rle):
            raise ValidationError("rle counts must be integers", sid, idx)
        try:
            box = BBox(*bbox)
            mask = rle_decode(rle, width, height)
        except CorruptDataError as exc:
            raise CorruptDataError(f"{where}: {exc}") from None
        except InputError as exc:
            raise ValidationError(str(exc), sid, idx) from None
        instances.append(InstanceAnnotation(class_id, box, mask))
    return Scene(sid, width, height, tuple(instances))


def parse_scene_file(data, num_classes: Optional[int] = None) -> list[Scene]:
    """Parse a version-1 scene file; raise on any malformed or invalid content."""
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise SchemaError("scene file must be a JSON object")
    version = _require(doc, "version", int, "scene file")
    if version != SCENE_FILE_VERSION:
        raise SchemaError(f"unsupported scene file version {version}")
    raw_scenes = _require(doc, "scenes", list, "scene file")
    scenes = [scene_from_dict(s, num_classes) for s in raw_scenes]
    seen = set()
    for s in scenes:
        if s.id in seen:
            raise ValidationError("duplicate scene id", scene_id=s.id)
        seen.add(s.id)
    return scenes


def write_scene_file(scenes: Iterable[Scene]) -> str:
    doc = {"version": SCENE_FILE_VERSION, "scenes": [scene_to_dict(s) for s in scenes]}
    return json.dumps(doc, separators=(",", ":"))


# --------------------------------------------------------------------------
# polygon rasterization


def _validate_polygon(vertices) -> np.ndarray:
    pts = np.asarray(vertices, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise InvalidPolygonError(f"polygon vertices must be (x, y) pairs, got shape {pts.shape}")
    if len(pts) < 3:
        raise InvalidPolygonError(f"polygon needs at least 3 vertices, got {len(pts)}")
    if not np.isfinite(pts).all():
        raise ValidationError("polygon has a non-finite coordinate")
    return pts


def _edge_crossings(pts: np.ndarray, y: float) -> np.ndarray:
    """x positions where the horizontal line at ``y`` crosses each polygon edge.

    An edge counts when exactly one endpoint lies strictly above ``y``; each
    edge is evaluated from its lower endpoint so the result does not depend
    on vertex order.
    """
    a = pts
    b = np.roll(pts, -1, axis=0)
    lower = np.where((a[:, 1] <= b[:, 1])[:, None], a, b)
    upper = np.where((a[:, 1] <= b[:, 1])[:, None], b, a)
    hit = (lower[:, 1] > y) != (upper[:, 1] > y)
    lo, up = lower[hit], upper[hit]
    return lo[:, 0] + (y - lo[:, 1]) * (up[:, 0] - lo[:, 0]) / (up[:, 1] - lo[:, 1])


def rasterize_polygon(vertices, width: int, height: int) -> BinaryMask:
    """Even-odd scanline fill sampled at pixel centers."""
    pts = _validate_polygon(vertices)
    if width < 1 or height < 1:
        raise ValidationError(f"non-positive raster size {width}x{height}")
    out = np.zeros((height, width), dtype=bool)
    xs = np.arange(width) + 0.5
    y_lo, y_hi = pts[:, 1].min(), pts[:, 1].max()
    i0 = max(0, int(math.floor(y_lo - 0.5)))
    i1 = min(height, int(math.ceil(y_hi - 0.5)) + 1)
    for i in range(i0, i1):
        crossings = np.sort(_edge_crossings(pts, i + 0.5))
        if crossings.size == 0:
            continue
        # crossings strictly right of each center; odd count means inside
        right = crossings.size - np.searchsorted(crossings, xs, side="right")
        out[i] = (right % 2) == 1
    return BinaryMask(out)


# --------------------------------------------------------------------------
# COCO subset import


@dataclass
class CocoImport:
    scenes: list[Scene]
    categories: list[dict]
    skipped_rle: int = 0
    skipped_crowd: int = 0
    skipped_bbox: int = 0
    skipped_class: int = 0
    warnings: list[str] = field(default_factory=list)


def _flat_to_pairs(flat, where):
    if not isinstance(flat, list) or len(flat) % 2:
        raise SchemaError(f"{where}: polygon must be a flat list of x, y values")
    if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in flat):
        raise SchemaError(f"{where}: polygon coordinates must be numbers")
    return [(flat[i], flat[i + 1]) for i in range(0, len(flat), 2)]


def import_coco_subset(data, class_whitelist: Optional[Sequence] = None) -> CocoImport:
    """Convert COCO instance annotations with polygon segmentations to scenes.

    ``class_whitelist`` holds category names or ids; kept categories are
    renumbered ``0..c-1`` in ascending category-id order.  RLE segmentations,
    crowd regions and boxes with non-positive extent are skipped and counted.
    """
    doc = _load_json(data)
    if not isinstance(doc, dict):
        raise SchemaError("COCO file must be a JSON object")
    images = _require(doc, "images", list, "COCO file")
    annotations = _require(doc, "annotations", list, "COCO file")
    categories = _require(doc, "categories", list, "COCO file")

    cats = []
    for cat in categories:
        cid = _require(cat, "id", int, "category")
        name = cat.get("name", str(cid)) if isinstance(cat, dict) else str(cid)
        if class_whitelist is None or cid in class_whitelist or name in class_whitelist:
            cats.append({"id": cid, "name": name})
    cats.sort(key=lambda c: c["id"])
    class_of = {c["id"]: i for i, c in enumerate(cats)}

    image_info = {}
    for img in images:
        iid = _require(img, "id", int, "image")
        w = _require(img, "width", int, f"image {iid}")
        h = _require(img, "height", int, f"image {iid}")
        if w < 1 or h < 1:
            raise ValidationError(f"image {iid} has non-positive size {w}x{h}")
        image_info[iid] = (w, h)

    result = CocoImport(scenes=[], categories=[{"class_id": i, **c} for i, c in enumerate(cats)])
    per_image: dict[int, list[InstanceAnnotation]] = {}
    for n, ann in enumerate(annotations):
        where = f"annotation {n}"
        iid = _require(ann, "image_id", int, where)
        cid = _require(ann, "category_id", int, where)
        bbox = _require(ann, "bbox", list, where)
        seg = _require(ann, "segmentation", (list, dict), where)
        if iid not in image_info:
            raise SchemaError(f"{where}: unknown image_id {iid}")
        if cid not in class_of:
            result.skipped_class += 1
            continue
        if ann.get("iscrowd", 0):
            result.skipped_crowd += 1
            continue
        if isinstance(seg, dict):
            result.skipped_rle += 1
            continue
        if len(bbox) != 4 or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in bbox
        ):
            raise SchemaError(f"{where}: bbox must be [x, y, w, h]")
        if not all(math.isfinite(v) for v in bbox):
            raise ValidationError(f"{where}: non-finite bbox")
        x, y, w, h = (float(v) for v in bbox)
        if w <= 0 or h <= 0:
            result.skipped_bbox += 1
            continue
        width, height = image_info[iid]
        bits = np.zeros((height, width), dtype=bool)
        for part_no, flat in enumerate(seg):
            pairs = _flat_to_pairs(flat, f"{where} part {part_no}")
            try:
                bits |= rasterize_polygon(pairs, width, height).bits
            except InputError as exc:
                raise ValidationError(f"{where} part {part_no}: {exc}") from None
        box = BBox(x, y, x + w, y + h)
        per_image.setdefault(iid, []).append(InstanceAnnotation(class_of[cid], box, BinaryMask(bits)))

    for iid in sorted(per_image):
        width, height = image_info[iid]
        result.scenes.append(Scene(str(iid), width, height, tuple(per_image[iid])))
    for label, count in (
        ("RLE segmentation", result.skipped_rle),
        ("crowd", result.skipped_crowd),
        ("non-positive bbox", result.skipped_bbox),
    ):
        if count:
            msg = f"skipped {count} {label} annotation(s)"
            result.warnings.append(msg)
            logger.warning(msg)
    return result
