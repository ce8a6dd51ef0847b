"""Per-location training targets on multi-level feature grids.

Two rules resolve locations that fall inside several boxes:

* ``area``: the box with the smallest area wins.
* ``center``: instances are ranked small-to-large by box area, each
  candidate is scored by how centered the location is inside its box, and
  the highest score wins.  Equal scores fall back to the area ranking.

A candidate is an instance whose box strictly contains the location (all
four side distances positive) and whose largest side distance lies in the
level's ``(min_range, max_range]`` interval.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from .errors import ConfigurationError, DomainError
from .geometry import BBox, Scene

Mode = Literal["area", "center"]


@dataclass(frozen=True)
class LevelSpec:
    stride: int
    min_range: float
    max_range: float = math.inf

    def __post_init__(self):
        if int(self.stride) != self.stride or self.stride < 1:
            raise ConfigurationError(f"stride must be a positive integer, got {self.stride}")
        if not self.min_range < self.max_range:
            raise ConfigurationError(f"empty range ({self.min_range}, {self.max_range}]")


FCOS_LEVELS = (
    LevelSpec(8, 0, 64),
    LevelSpec(16, 64, 128),
    LevelSpec(32, 128, 256),
    LevelSpec(64, 256, 512),
    LevelSpec(128, 512, math.inf),
)


def fcos_levels(n: int = 5) -> tuple[LevelSpec, ...]:
    """First ``n`` FCOS levels, with the last one's range opened to infinity."""
    if not 1 <= n <= len(FCOS_LEVELS):
        raise ConfigurationError(f"between 1 and {len(FCOS_LEVELS)} levels available")
    levels = list(FCOS_LEVELS[:n])
    last = levels[-1]
    levels[-1] = LevelSpec(last.stride, last.min_range, math.inf)
    return tuple(levels)


@dataclass(frozen=True)
class LocationGrid:
    level: LevelSpec
    rows: int
    cols: int
    points: np.ndarray  # (rows * cols, 2) row-major (x, y)


@dataclass(frozen=True)
class RegressionTarget:
    l: float
    t: float
    r: float
    b: float

    def as_tuple(self):
        return (self.l, self.t, self.r, self.b)


@dataclass
class LevelTargets:
    level: LevelSpec
    rows: int
    cols: int
    class_label: np.ndarray  # (rows, cols) int, -1 for negatives
    center_score: np.ndarray  # (rows, cols) float, 0 for negatives
    regression: np.ndarray  # (rows, cols, 4) float, NaN for negatives
    owner: np.ndarray  # (rows, cols) int, -1 for negatives

    @property
    def positives(self) -> np.ndarray:
        return self.owner >= 0


@dataclass
class TargetMap:
    levels: list[LevelTargets]
    mode: str

    def positive_counts(self) -> list[int]:
        return [int(lv.positives.sum()) for lv in self.levels]

    def to_dict(self) -> dict:
        out = {"mode": self.mode, "levels": []}
        for lv in self.levels:
            pos = lv.positives.ravel()
            reg = lv.regression.reshape(-1, 4)
            out["levels"].append(
                {
                    "stride": lv.level.stride,
                    "min_range": lv.level.min_range,
                    "max_range": None if math.isinf(lv.level.max_range) else lv.level.max_range,
                    "rows": lv.rows,
                    "cols": lv.cols,
                    "class_label": lv.class_label.ravel().tolist(),
                    "center_score": lv.center_score.ravel().tolist(),
                    "owner": lv.owner.ravel().tolist(),
                    **{
                        name: [float(v) if p else None for v, p in zip(reg[:, j], pos)]
                        for j, name in enumerate("ltrb")
                    },
                }
            )
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), separators=(",", ":"))


def make_locations(level: LevelSpec, width: int, height: int) -> LocationGrid:
    s = level.stride
    rows = -(-height // s)
    cols = -(-width // s)
    xs = s / 2 + np.arange(cols, dtype=np.float64) * s
    ys = s / 2 + np.arange(rows, dtype=np.float64) * s
    gx, gy = np.meshgrid(xs, ys)
    return LocationGrid(level, rows, cols, np.stack([gx.ravel(), gy.ravel()], axis=1))


def regression_target(point, box: BBox) -> RegressionTarget:
    px, py = point
    return RegressionTarget(px - box.x1, py - box.y1, box.x2 - px, box.y2 - py)


def center_score(t: RegressionTarget) -> float:
    l, tt, r, b = t.as_tuple()
    if not (l > 0 and tt > 0 and r > 0 and b > 0):
        raise DomainError(f"center score needs positive distances, got {t.as_tuple()}")
    return math.sqrt((min(l, r) / max(l, r)) * (min(tt, b) / max(tt, b)))


def _areas(instances) -> list[float]:
    return [float(getattr(x, "area", x)) for x in instances]


def area_rank(instances) -> list[int]:
    """Indices ordered by box area, smallest first; equal areas keep input order."""
    areas = _areas(instances)
    return sorted(range(len(areas)), key=lambda i: areas[i])


def _distances(points: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    px = points[:, None, 0]
    py = points[:, None, 1]
    return np.stack(
        [px - boxes[None, :, 0], py - boxes[None, :, 1], boxes[None, :, 2] - px, boxes[None, :, 3] - py],
        axis=-1,
    )


def _center_scores(d: np.ndarray) -> np.ndarray:
    l, t, r, b = d[..., 0], d[..., 1], d[..., 2], d[..., 3]
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt((np.minimum(l, r) / np.maximum(l, r)) * (np.minimum(t, b) / np.maximum(t, b)))


def _assign_level(scene: Scene, grid: LocationGrid, mode: str) -> LevelTargets:
    n_loc = grid.rows * grid.cols
    class_label = np.full(n_loc, -1, dtype=np.int64)
    score = np.zeros(n_loc)
    regression = np.full((n_loc, 4), np.nan)
    owner = np.full(n_loc, -1, dtype=np.int64)
    if scene.instances:
        boxes = np.array([inst.box.as_tuple() for inst in scene.instances])
        areas = np.array([inst.area for inst in scene.instances])
        classes = np.array([inst.class_id for inst in scene.instances])
        d = _distances(grid.points, boxes)
        m = d.max(axis=-1)
        cand = (d > 0).all(axis=-1) & (m > grid.level.min_range) & (m <= grid.level.max_range)
        has = cand.any(axis=1)
        cs = _center_scores(d)
        if mode == "area":
            # argmin returns the first minimum, i.e. the smaller index on ties
            key = np.where(cand, areas[None, :], np.inf)
            win = np.argmin(key, axis=1)
        elif mode == "center":
            rank = np.array(area_rank(areas), dtype=np.int64)
            key = np.where(cand, cs, -1.0)[:, rank]
            win = rank[np.argmax(key, axis=1)]
        else:
            raise ConfigurationError(f"unknown assignment mode {mode!r}")
        idx = np.flatnonzero(has)
        w = win[idx]
        owner[idx] = w
        class_label[idx] = classes[w]
        score[idx] = cs[idx, w]
        regression[idx] = d[idx, w]
    shape = (grid.rows, grid.cols)
    return LevelTargets(
        grid.level,
        grid.rows,
        grid.cols,
        class_label.reshape(shape),
        score.reshape(shape),
        regression.reshape(shape + (4,)),
        owner.reshape(shape),
    )


def assign_area_minimal(scene: Scene, grids: Sequence[LocationGrid]) -> TargetMap:
    return TargetMap([_assign_level(scene, g, "area") for g in grids], "area")


def assign_center_aware(scene: Scene, grids: Sequence[LocationGrid]) -> TargetMap:
    return TargetMap([_assign_level(scene, g, "center") for g in grids], "center")


def validate_levels(level_specs: Sequence[LevelSpec]) -> None:
    if not level_specs:
        raise ConfigurationError("at least one level is required")
    for a, b in zip(level_specs, level_specs[1:]):
        if not b.stride > a.stride:
            raise ConfigurationError(f"strides must increase strictly: {a.stride} then {b.stride}")
        if a.max_range != b.min_range:
            kind = "overlap" if a.max_range > b.min_range else "gap"
            raise ConfigurationError(
                f"level ranges must be contiguous, {kind} between ({a.min_range}, {a.max_range}]"
                f" and ({b.min_range}, {b.max_range}]"
            )


def build_targets(scene: Scene, level_specs: Sequence[LevelSpec] = FCOS_LEVELS, mode: Mode = "center") -> TargetMap:
    validate_levels(level_specs)
    grids = [make_locations(lv, scene.width, scene.height) for lv in level_specs]
    if mode == "area":
        return assign_area_minimal(scene, grids)
    if mode == "center":
        return assign_center_aware(scene, grids)
    raise ConfigurationError(f"unknown assignment mode {mode!r}")


def disagreement_count(a: TargetMap, b: TargetMap) -> int:
    """Locations whose owning instance differs between two maps."""
    return int(sum(np.count_nonzero(x.owner != y.owner) for x, y in zip(a.levels, b.levels)))


def summarize(scene: Scene, level_specs: Sequence[LevelSpec] = FCOS_LEVELS) -> dict:
    area = build_targets(scene, level_specs, "area")
    center = build_targets(scene, level_specs, "center")
    return {
        "scene_id": scene.id,
        "instances": len(scene.instances),
        "positives_area": area.positive_counts(),
        "positives_center": center.positive_counts(),
        "center_steal": disagreement_count(area, center),
    }
