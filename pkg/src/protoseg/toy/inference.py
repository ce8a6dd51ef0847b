"""Turning head outputs into scored, masked detections."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..geometry import BBox, Detection, SoftMask, box_iou_matrix
from ..prototypes import box_membership, resize_bilinear
from .layers import sigmoid
from .network import HeadOutput, Model, forward


@dataclass(frozen=True)
class PredictParams:
    score_thr: float = 0.05
    nms_iou: float = 0.5
    top: int = 100
    mask_thr: float = 0.5
    pre_nms_top: int = 1000


def nms(boxes: np.ndarray, scores: np.ndarray, iou_thr: float) -> list[int]:
    """Greedy suppression; returns kept indices in descending score order.

    A box is dropped when its IoU with an already kept box exceeds ``iou_thr``.
    """
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    if not order:
        return []
    ious = box_iou_matrix(boxes, boxes)
    keep = []
    suppressed = np.zeros(len(scores), dtype=bool)
    for i in order:
        if suppressed[i]:
            continue
        keep.append(i)
        suppressed |= ious[i] > iou_thr
    return keep


def location_points(out: HeadOutput) -> np.ndarray:
    s = out.stride
    xs = s / 2 + np.arange(out.cols) * s
    ys = s / 2 + np.arange(out.rows) * s
    return np.stack(np.meshgrid(xs, ys), axis=-1)  # (rows, cols, 2)


def decode_detections(out: HeadOutput, params: PredictParams = PredictParams()) -> list[Detection]:
    probs = sigmoid(out.cls_logits) * sigmoid(out.ctr_logits)[None]
    cls_idx, rr, cc = np.nonzero(probs > params.score_thr)
    if cls_idx.size == 0:
        return []
    scores = probs[cls_idx, rr, cc]
    order = np.argsort(-scores, kind="stable")[: params.pre_nms_top]
    cls_idx, rr, cc, scores = cls_idx[order], rr[order], cc[order], scores[order]

    pts = location_points(out)[rr, cc]
    dist = out.distances()[:, rr, cc].T
    W, H = out.image_width, out.image_height
    # locations lie strictly inside the image, so clipping keeps boxes non-degenerate
    boxes = np.stack(
        [
            np.maximum(pts[:, 0] - dist[:, 0], 0.0),
            np.maximum(pts[:, 1] - dist[:, 1], 0.0),
            np.minimum(pts[:, 0] + dist[:, 2], W),
            np.minimum(pts[:, 1] + dist[:, 3], H),
        ],
        axis=1,
    )

    kept = []
    for cls in np.unique(cls_idx):
        sel = np.flatnonzero(cls_idx == cls)
        kept.extend(sel[i] for i in nms(boxes[sel], scores[sel], params.nms_iou))
    kept.sort(key=lambda i: (-scores[i], i))
    kept = kept[: params.top]

    detections = []
    for i in kept:
        coeff = out.coeffs[:, rr[i], cc[i]]
        soft = sigmoid(np.tensordot(coeff, out.protos, axes=1))
        soft = np.clip(resize_bilinear(soft, W, H), 0.0, 1.0)
        box = BBox(*boxes[i])
        soft = np.where(box_membership(box, W, H), soft, 0.0)
        detections.append(Detection(int(cls_idx[i]), float(min(1.0, scores[i])), box, SoftMask(soft)))
    return detections


def predict(model: Model, image, params: PredictParams = PredictParams()) -> list[Detection]:
    return decode_detections(forward(model, image), params)
