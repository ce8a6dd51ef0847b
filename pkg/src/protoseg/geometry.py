"""Boxes, masks, annotations and the row-major run-length codec.

Coordinates are continuous with the origin at the top-left corner and ``y``
pointing down.  Pixel ``(row i, col j)`` covers ``[j, j+1) x [i, i+1)`` and
its center is ``(j + 0.5, i + 0.5)``.

All value types are immutable once built; mask arrays are marked read-only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CorruptDataError, InvalidGeometryError, ShapeError

__all__ = [
    "BBox",
    "BinaryMask",
    "SoftMask",
    "InstanceAnnotation",
    "Scene",
    "Detection",
    "box_area",
    "box_iou",
    "mask_iou",
    "rle_encode",
    "rle_decode",
    "rle_roundtrip",
]


def _frozen(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        coords = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in coords):
            raise InvalidGeometryError(f"non-finite box coordinate in {coords}")
        if not (self.x2 > self.x1 and self.y2 > self.y1):
            raise InvalidGeometryError(f"degenerate box {coords}")
        for name, v in zip(("x1", "y1", "x2", "y2"), coords):
            object.__setattr__(self, name, float(v))

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def center(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)

    def scaled(self, factor: float) -> "BBox":
        return BBox(self.x1 * factor, self.y1 * factor, self.x2 * factor, self.y2 * factor)

    @classmethod
    def from_xywh(cls, x, y, w, h) -> "BBox":
        return cls(x, y, x + w, y + h)


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Row-major grid of bits, stored as a read-only ``(height, width)`` bool array."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 2 or bits.shape[0] < 1 or bits.shape[1] < 1:
            raise ShapeError(f"mask must be a non-empty 2-D grid, got shape {bits.shape}")
        if bits.dtype != np.bool_:
            if not np.isin(bits, (0, 1)).all():
                raise CorruptDataError("mask values must be 0 or 1")
            bits = bits.astype(bool)
        else:
            bits = bits.copy()
        object.__setattr__(self, "bits", _frozen(bits))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def zeros(cls, width: int, height: int) -> "BinaryMask":
        return cls(np.zeros((height, width), dtype=bool))

    @classmethod
    def from_box(cls, box: BBox, width: int, height: int) -> "BinaryMask":
        """Pixels whose centers fall inside ``box`` (closed on all sides)."""
        xs = np.arange(width) + 0.5
        ys = np.arange(height) + 0.5
        cols = (xs >= box.x1) & (xs <= box.x2)
        rows = (ys >= box.y1) & (ys <= box.y2)
        return cls(rows[:, None] & cols[None, :])

    def __eq__(self, other):
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return self.bits.shape == other.bits.shape and bool(np.array_equal(self.bits, other.bits))

    def __hash__(self):
        return hash((self.bits.shape, self.bits.tobytes()))

    def __repr__(self):
        return f"BinaryMask({self.width}x{self.height}, on={self.count})"


@dataclass(frozen=True, eq=False)
class SoftMask:
    """Row-major grid of probabilities in ``[0, 1]``."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise ShapeError(f"soft mask must be a non-empty 2-D grid, got shape {values.shape}")
        if not np.all((values >= 0.0) & (values <= 1.0)):
            raise ShapeError("soft mask values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(values))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SoftMask):
            return NotImplemented
        return bool(np.array_equal(self.values, other.values))

    def __repr__(self):
        return f"SoftMask({self.width}x{self.height})"


@dataclass(frozen=True)
class InstanceAnnotation:
    class_id: int
    box: BBox
    mask: BinaryMask
    area: float = field(init=False)

    def __post_init__(self):
        if int(self.class_id) != self.class_id or self.class_id < 0:
            raise InvalidGeometryError(f"class_id must be a non-negative integer, got {self.class_id}")
        object.__setattr__(self, "class_id", int(self.class_id))
        object.__setattr__(self, "area", box_area(self.box))


@dataclass(frozen=True)
class Scene:
    id: str
    width: int
    height: int
    instances: tuple[InstanceAnnotation, ...] = ()

    def __post_init__(self):
        if int(self.width) != self.width or int(self.height) != self.height:
            raise ShapeError("scene dimensions must be integers")
        if self.width < 1 or self.height < 1:
            raise ShapeError(f"scene dimensions must be positive, got {self.width}x{self.height}")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        object.__setattr__(self, "instances", tuple(self.instances))
        for idx, inst in enumerate(self.instances):
            if (inst.mask.width, inst.mask.height) != (self.width, self.height):
                raise ShapeError(
                    f"scene {self.id!r} instance {idx}: mask is {inst.mask.width}x{inst.mask.height},"
                    f" scene is {self.width}x{self.height}"
                )

    def __len__(self):
        return len(self.instances)


@dataclass(frozen=True)
class Detection:
    class_id: int
    score: float
    box: BBox
    mask: Optional[SoftMask] = None

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise InvalidGeometryError(f"detection score must lie in [0, 1], got {self.score}")


def box_area(box: BBox) -> float:
    area = (box.x2 - box.x1) * (box.y2 - box.y1)
    if not area > 0:
        raise InvalidGeometryError(f"degenerate box {box.as_tuple()}")
    return area


def box_iou(a: BBox, b: BBox) -> float:
    if a == b:
        return 1.0
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (box_area(a) + box_area(b) - inter)


def box_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two ``(n, 4)`` / ``(m, 4)`` corner arrays."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    iw = np.minimum(a[:, None, 2], b[None, :, 2]) - np.maximum(a[:, None, 0], b[None, :, 0])
    ih = np.minimum(a[:, None, 3], b[None, :, 3]) - np.maximum(a[:, None, 1], b[None, :, 1])
    inter = np.where((iw > 0) & (ih > 0), iw * ih, 0.0)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    return inter / union


def mask_iou(a: BinaryMask, b: BinaryMask) -> float:
    if a.bits.shape != b.bits.shape:
        raise ShapeError(f"mask shapes differ: {a.bits.shape} vs {b.bits.shape}")
    union = int(np.count_nonzero(a.bits | b.bits))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a.bits & b.bits)) / union


def mask_iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of stacks of flattened masks, ``(n, hw)`` and ``(m, hw)``."""
    a = np.asarray(a, dtype=np.float64).reshape(len(a), -1)
    b = np.asarray(b, dtype=np.float64).reshape(len(b), -1)
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    return out


def rle_encode(mask: BinaryMask) -> list[int]:
    """Row-major run lengths, alternating zero-runs and one-runs.

    The first count is the leading zero-run and may be 0.
    """
    flat = mask.bits.ravel()
    change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], change, [flat.size]))
    runs = np.diff(bounds).tolist()
    if flat[0]:
        runs.insert(0, 0)
    return [int(r) for r in runs]


def rle_decode(counts: Sequence[int], width: int, height: int) -> BinaryMask:
    counts = list(counts)
    if any(int(c) != c or c < 0 for c in counts):
        raise CorruptDataError("RLE counts must be non-negative integers")
    total = width * height
    if sum(counts) != total:
        raise CorruptDataError(f"RLE counts sum to {sum(counts)}, expected {width}x{height}={total}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, np.asarray(counts, dtype=np.int64))
    return BinaryMask(flat.reshape(height, width))


def rle_roundtrip(mask: BinaryMask) -> BinaryMask:
    return rle_decode(rle_encode(mask), mask.width, mask.height)
