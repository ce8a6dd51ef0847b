"""COCO-style box and mask average precision.

AP uses 101-point interpolation of the precision envelope.  mAP averages AP
over classes that have ground truth, then over IoU thresholds.  Size
buckets follow the COCO ignore rules: ground truth outside the bucket is
ignored, a detection matched to ignored ground truth is ignored, and an
unmatched detection only counts as a false positive when its own area
falls in the bucket.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Literal, Mapping, Optional, Sequence

import numpy as np

from .errors import InputError, SchemaError
from .geometry import (
    BBox,
    BinaryMask,
    Detection,
    Scene,
    SoftMask,
    box_iou_matrix,
    mask_iou_matrix,
    rle_decode,
    rle_encode,
)
from .ingest import _load_json

TP, FP, IGNORED = 1, 0, -1

COCO_THRESHOLDS = tuple(round(0.5 + 0.05 * i, 2) for i in range(10))
RECALL_POINTS = np.arange(101) / 100.0


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple[float, ...] = COCO_THRESHOLDS
    kind: Literal["box", "mask"] = "box"
    small_max: float = 32.0**2
    medium_max: float = 96.0**2
    max_dets: int = 100
    mask_threshold: float = 0.5

    def __post_init__(self):
        th = tuple(float(t) for t in self.iou_thresholds)
        if not th or any(not 0 < t < 1 for t in th) or any(b <= a for a, b in zip(th, th[1:])):
            raise InputError(f"IoU thresholds must be strictly increasing in (0, 1): {th}")
        object.__setattr__(self, "iou_thresholds", th)
        if self.kind not in ("box", "mask"):
            raise InputError(f"unknown evaluation kind {self.kind!r}")

    def buckets(self) -> dict[str, tuple[float, float]]:
        return {
            "all": (0.0, math.inf),
            "small": (0.0, self.small_max),
            "medium": (self.small_max, self.medium_max),
            "large": (self.medium_max, math.inf),
        }


@dataclass
class EvalReport:
    kind: str
    mAP: Optional[float]
    AP50: Optional[float]
    AP75: Optional[float]
    APS: Optional[float]
    APM: Optional[float]
    APL: Optional[float]
    per_class: dict[int, dict[str, Optional[float]]] = field(default_factory=dict)
    per_threshold: dict[float, Optional[float]] = field(default_factory=dict)
    pr_curves: dict[int, tuple[list[float], list[float]]] = field(default_factory=dict, repr=False)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "mAP": self.mAP,
            "AP50": self.AP50,
            "AP75": self.AP75,
            "APS": self.APS,
            "APM": self.APM,
            "APL": self.APL,
            "per_class": {str(k): v for k, v in sorted(self.per_class.items())},
            "per_threshold": {f"{k:.2f}": v for k, v in self.per_threshold.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


@dataclass
class MatchResult:
    det_tp: list[bool]
    gt_matched: list[bool]
    det_gt: list[int]  # matched GT index per detection, -1 if none
    order: list[int]  # detection indices in score order


def _score_order(scores) -> list[int]:
    # stable: equal scores keep insertion order
    return sorted(range(len(scores)), key=lambda i: -scores[i])


def _greedy(ious: np.ndarray, thr: float, gt_ignore: np.ndarray, det_in_bucket: np.ndarray):
    """Match rows (detections, already in score order) to columns (GT)."""
    n_det, n_gt = ious.shape
    status = np.full(n_det, FP, dtype=np.int64)
    det_gt = np.full(n_det, -1, dtype=np.int64)
    taken = np.zeros(n_gt, dtype=bool)
    for d in range(n_det):
        best, best_iou = -1, -1.0
        for tier in (False, True):
            for g in range(n_gt):
                if taken[g] or gt_ignore[g] != tier:
                    continue
                iou = ious[d, g]
                if iou >= thr and iou > best_iou:
                    best, best_iou = g, iou
            if best >= 0:
                break
        if best >= 0:
            taken[best] = True
            det_gt[d] = best
            status[d] = IGNORED if gt_ignore[best] else TP
        elif not det_in_bucket[d]:
            status[d] = IGNORED
    return status, det_gt, taken


def _binarized(det: Detection, threshold: float, where: str) -> np.ndarray:
    if det.mask is None:
        raise InputError(f"{where}: mask evaluation needs detection masks")
    return det.mask.values > threshold


def _pairwise_iou(dets: Sequence[Detection], gts, kind: str, mask_threshold: float, where: str):
    if not dets or not gts:
        return np.zeros((len(dets), len(gts)))
    if kind == "box":
        return box_iou_matrix(
            np.array([d.box.as_tuple() for d in dets]), np.array([g.box.as_tuple() for g in gts])
        )
    dm = np.stack([_binarized(d, mask_threshold, where).ravel() for d in dets])
    gm = np.stack([g.mask.bits.ravel() for g in gts])
    if dm.shape[1] != gm.shape[1]:
        raise InputError(f"{where}: detection mask size does not match the scene")
    return mask_iou_matrix(dm, gm)


def match_detections(dets: Sequence[Detection], gts, iou_thr: float, kind: str = "box",
                     mask_threshold: float = 0.5) -> MatchResult:
    """Greedy one-to-one matching within classes, highest-scored detection first."""
    order = _score_order([d.score for d in dets])
    det_tp = [False] * len(dets)
    det_gt = [-1] * len(dets)
    gt_matched = [False] * len(gts)
    for cls in sorted({d.class_id for d in dets}):
        d_idx = [i for i in order if dets[i].class_id == cls]
        g_idx = [j for j, g in enumerate(gts) if g.class_id == cls]
        ious = _pairwise_iou([dets[i] for i in d_idx], [gts[j] for j in g_idx], kind, mask_threshold, "match")
        status, dg, _ = _greedy(ious, iou_thr, np.zeros(len(g_idx), bool), np.ones(len(d_idx), bool))
        for row, i in enumerate(d_idx):
            if status[row] == TP:
                det_tp[i] = True
                det_gt[i] = g_idx[dg[row]]
                gt_matched[g_idx[dg[row]]] = True
    return MatchResult(det_tp, gt_matched, det_gt, order)


def precision_recall(flags: Sequence[bool], num_gt: int) -> tuple[np.ndarray, np.ndarray]:
    tp = np.cumsum(np.asarray(flags, dtype=np.float64))
    fp = np.cumsum(1.0 - np.asarray(flags, dtype=np.float64))
    recall = tp / num_gt if num_gt else np.zeros_like(tp)
    with np.errstate(invalid="ignore"):
        precision = tp / np.maximum(tp + fp, np.finfo(np.float64).tiny)
    return recall, precision


def average_precision(flags: Sequence[bool], num_gt: int) -> Optional[float]:
    """101-point interpolated AP of a score-ordered TP/FP sequence; ``None`` without GT."""
    if num_gt == 0:
        return None
    if len(flags) == 0:
        return 0.0
    recall, precision = precision_recall(flags, num_gt)
    envelope = np.maximum.accumulate(precision[::-1])[::-1]
    idx = np.searchsorted(recall, RECALL_POINTS, side="left")
    sampled = np.where(idx < len(recall), envelope[np.minimum(idx, len(recall) - 1)], 0.0)
    return float(np.mean(sampled))


def _mean(values) -> Optional[float]:
    vals = [v for v in values if v is not None]
    return float(np.mean(vals)) if vals else None


class _ClassData:
    """Per-(scene, class) detections in score order with IoUs and areas."""

    def __init__(self):
        self.items = []  # (scene_rank, scores, ious, gt_areas, det_areas)


def _collect(preds: Mapping[str, Sequence[Detection]], scenes: Sequence[Scene], config: EvalConfig):
    known = {s.id for s in scenes}
    for sid in preds:
        if sid not in known:
            raise InputError(f"predictions reference unknown scene id {sid!r}")
    classes = sorted({inst.class_id for s in scenes for inst in s.instances}
                     | {d.class_id for ds in preds.values() for d in ds})
    data = {c: _ClassData() for c in classes}
    for rank, scene in enumerate(sorted(scenes, key=lambda s: s.id)):
        dets = list(preds.get(scene.id, ()))
        for cls in classes:
            cd = [d for d in dets if d.class_id == cls]
            order = _score_order([d.score for d in cd])[: config.max_dets]
            cd = [cd[i] for i in order]
            gts = [g for g in scene.instances if g.class_id == cls]
            if not cd and not gts:
                continue
            ious = _pairwise_iou(cd, gts, config.kind, config.mask_threshold, f"scene {scene.id!r}")
            if config.kind == "box":
                gt_areas = np.array([g.area for g in gts])
                det_areas = np.array([d.box.width * d.box.height for d in cd])
            else:
                gt_areas = np.array([g.mask.count for g in gts], dtype=np.float64)
                det_areas = np.array(
                    [_binarized(d, config.mask_threshold, scene.id).sum() for d in cd], dtype=np.float64
                )
            data[cls].items.append((rank, np.array([d.score for d in cd]), ious, gt_areas, det_areas))
    return data


def _class_ap(cd: _ClassData, thr: float, lo: float, hi: float, want_curve: bool = False):
    entries = []  # (score, scene_rank, det_index, status)
    num_gt = 0
    for rank, scores, ious, gt_areas, det_areas in cd.items:
        gt_ignore = ~((gt_areas >= lo) & (gt_areas < hi)) if len(gt_areas) else np.zeros(0, bool)
        det_in = (det_areas >= lo) & (det_areas < hi) if len(det_areas) else np.zeros(0, bool)
        num_gt += int((~gt_ignore).sum())
        status, _, _ = _greedy(ious, thr, gt_ignore, det_in)
        entries.extend((float(scores[i]), rank, i, int(status[i])) for i in range(len(scores)))
    entries.sort(key=lambda e: (-e[0], e[1], e[2]))
    flags = [e[3] == TP for e in entries if e[3] != IGNORED]
    ap = average_precision(flags, num_gt)
    if want_curve and num_gt:
        r, p = precision_recall(flags, num_gt)
        return ap, (r.tolist(), p.tolist())
    return ap, None


def evaluate(preds: Mapping[str, Sequence[Detection]], scenes: Sequence[Scene],
             config: EvalConfig = EvalConfig()) -> EvalReport:
    data = _collect(preds, scenes, config)
    buckets = config.buckets()
    thresholds = list(config.iou_thresholds)
    extra = [t for t in (0.5, 0.75) if t not in thresholds]

    def table(lo, hi, ths, curves=False):
        out = {}
        for cls, cd in data.items():
            for t in ths:
                out[cls, t] = _class_ap(cd, t, lo, hi, want_curve=curves and t == ths[0])
        return out

    all_lo, all_hi = buckets["all"]
    main = table(all_lo, all_hi, thresholds + extra, curves=True)
    per_threshold = {t: _mean(main[c, t][0] for c in data) for t in thresholds}
    per_class = {}
    for cls in data:
        per_class[cls] = {
            "AP": _mean(main[cls, t][0] for t in thresholds),
            "AP50": main[cls, 0.5][0],
            "AP75": main[cls, 0.75][0],
        }
    sized = {}
    for name in ("small", "medium", "large"):
        lo, hi = buckets[name]
        tab = table(lo, hi, thresholds)
        sized[name] = _mean(_mean(tab[c, t][0] for c in data) for t in thresholds)
    curves = {cls: main[cls, thresholds[0]][1] for cls in data if main[cls, thresholds[0]][1]}
    return EvalReport(
        kind=config.kind,
        mAP=_mean(per_threshold.values()),
        AP50=_mean(main[c, 0.5][0] for c in data),
        AP75=_mean(main[c, 0.75][0] for c in data),
        APS=sized["small"],
        APM=sized["medium"],
        APL=sized["large"],
        per_class=per_class,
        per_threshold=per_threshold,
        pr_curves=curves,
    )


# --------------------------------------------------------------------------
# predictions file


def predictions_to_json(preds: Mapping[str, Sequence[Detection]], mask_threshold: float = 0.5) -> str:
    rows = []
    for sid in sorted(preds):
        for d in preds[sid]:
            row = {
                "scene_id": sid,
                "class_id": d.class_id,
                "score": d.score,
                "bbox": [round(v, 6) for v in d.box.as_tuple()],
            }
            if d.mask is not None:
                row["rle"] = rle_encode(BinaryMask(d.mask.values > mask_threshold))
            rows.append(row)
    return json.dumps(rows, separators=(",", ":"))


def parse_predictions(data, scenes: Sequence[Scene]) -> dict[str, list[Detection]]:
    rows = _load_json(data)
    if not isinstance(rows, list):
        raise SchemaError("predictions file must be a JSON list")
    dims = {s.id: (s.width, s.height) for s in scenes}
    out: dict[str, list[Detection]] = {}
    for n, row in enumerate(rows):
        if not isinstance(row, dict) or not {"scene_id", "class_id", "score", "bbox"} <= row.keys():
            raise SchemaError(f"prediction {n}: needs scene_id, class_id, score and bbox")
        sid = str(row["scene_id"])
        if sid not in dims:
            raise InputError(f"prediction {n}: unknown scene id {sid!r}")
        mask = None
        if row.get("rle") is not None:
            w, h = dims[sid]
            mask = SoftMask(rle_decode(row["rle"], w, h).bits.astype(np.float64))
        try:
            det = Detection(int(row["class_id"]), float(row["score"]), BBox(*row["bbox"]), mask)
        except (TypeError, ValueError) as exc:
            raise InputError(f"prediction {n}: {exc}") from None
        out.setdefault(sid, []).append(det)
    return out
