"""Training loss for the toy head and its gradients w.r.t. the head outputs.

Terms (unit weights by default):

* focal loss (alpha 0.25, gamma 2) over every location and class, divided
  by the positive count (at least 1);
* ``-ln IoU`` between predicted and target boxes, mean over positives;
* BCE between the center logit and the center-score target, mean over
  positives;
* per positive, BCE of the assembled, upsampled mask against the GT mask
  over pixels inside the GT box, divided by the GT box area; mean over
  positives.  Pixels outside the box are cropped to 0 and carry no loss.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..assignment import TargetMap
from ..errors import ShapeError
from ..geometry import Scene
from ..prototypes import bilinear_matrix, box_membership
from .layers import sigmoid, softplus
from .network import HeadOutput

FOCAL_ALPHA = 0.25
FOCAL_GAMMA = 2.0
PROB_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    cls: float = 1.0
    box: float = 1.0
    center: float = 1.0
    mask: float = 1.0


@dataclass
class LossBreakdown:
    total: float
    cls_focal: float
    box_iou_loss: float
    center_bce: float
    mask_bce: float
    positive_count: int

    def as_dict(self) -> dict:
        return asdict(self)


TERMS = ("cls_focal", "box_iou_loss", "center_bce", "mask_bce")


def focal_loss(logits, targets, alpha=FOCAL_ALPHA, gamma=FOCAL_GAMMA):
    """Elementwise sigmoid focal loss and its derivative w.r.t. the logits."""
    p = sigmoid(logits)
    log_p = -softplus(-logits)
    log_1mp = -softplus(logits)
    pos = targets > 0.5
    loss = np.where(
        pos,
        -alpha * (1.0 - p) ** gamma * log_p,
        -(1.0 - alpha) * p**gamma * log_1mp,
    )
    grad = np.where(
        pos,
        alpha * (1.0 - p) ** gamma * (gamma * p * log_p - (1.0 - p)),
        (1.0 - alpha) * p**gamma * (p - gamma * (1.0 - p) * log_1mp),
    )
    return loss, grad


def iou_loss(pred, target):
    """``-ln IoU`` of boxes given as side distances from a shared point.

    ``pred`` and ``target`` are ``(n, 4)`` arrays of (l, t, r, b).  Returns
    the per-row loss and its gradient w.r.t. ``pred``.
    """
    pl, pt, pr, pb = pred.T
    tl, tt, tr, tb = target.T
    iw_l, iw_r = np.minimum(pl, tl), np.minimum(pr, tr)
    ih_t, ih_b = np.minimum(pt, tt), np.minimum(pb, tb)
    iw, ih = iw_l + iw_r, ih_t + ih_b
    inter = iw * ih
    area_p = (pl + pr) * (pt + pb)
    area_t = (tl + tr) * (tt + tb)
    union = area_p + area_t - inter
    loss = np.log(union) - np.log(inter)
    d_inter = -1.0 / inter - 1.0 / union
    d_area = 1.0 / union
    grad = np.stack(
        [
            d_inter * ih * (pl < tl) + d_area * (pt + pb),
            d_inter * iw * (pt < tt) + d_area * (pl + pr),
            d_inter * ih * (pr < tr) + d_area * (pt + pb),
            d_inter * iw * (pb < tb) + d_area * (pl + pr),
        ],
        axis=1,
    )
    return loss, grad


def _check_grid(output: HeadOutput, targets: TargetMap):
    if len(targets.levels) != 1:
        raise ShapeError(f"toy head has one level, targets have {len(targets.levels)}")
    lv = targets.levels[0]
    if (lv.rows, lv.cols) != (output.rows, output.cols):
        raise ShapeError(f"target grid {lv.rows}x{lv.cols} does not match head grid {output.rows}x{output.cols}")
    return lv


def loss_and_grads(output: HeadOutput, targets: TargetMap, scene: Scene, weights: LossWeights = LossWeights()):
    """Return ``(LossBreakdown, (d_cls, d_ctr, d_reg, d_coeffs, d_protos))``."""
    lv = _check_grid(output, targets)
    c = output.cls_logits.shape[0]
    pos = lv.owner >= 0
    n_pos = int(pos.sum())
    norm = max(1, n_pos)

    onehot = np.zeros_like(output.cls_logits)
    rr, cc = np.nonzero(pos)
    if n_pos:
        if lv.class_label[pos].max() >= c:
            raise ShapeError(f"target class {lv.class_label[pos].max()} exceeds the head's {c} classes")
        onehot[lv.class_label[pos], rr, cc] = 1.0
    fl, fl_grad = focal_loss(output.cls_logits, onehot)
    cls_term = fl.sum() / norm
    d_cls = weights.cls * fl_grad / norm

    d_ctr = np.zeros_like(output.ctr_logits)
    d_reg = np.zeros_like(output.reg_raw)
    d_coeffs = np.zeros_like(output.coeffs)
    d_protos = np.zeros_like(output.protos)
    box_term = center_term = mask_term = 0.0

    if n_pos:
        # regression
        dist = output.distances()[:, rr, cc].T
        target = lv.regression[rr, cc]
        il, ig = iou_loss(dist, target)
        box_term = il.mean()
        d_reg[:, rr, cc] = (weights.box * ig * dist / n_pos).T

        # centerness
        logit = output.ctr_logits[rr, cc]
        tgt = lv.center_score[rr, cc]
        bce = softplus(logit) - tgt * logit
        center_term = bce.mean()
        d_ctr[rr, cc] = weights.center * (sigmoid(logit) - tgt) / n_pos

        # masks
        mask_term, d_coeffs_pos, d_protos = _mask_loss(output, lv.owner[rr, cc], rr, cc, scene, weights.mask / n_pos)
        mask_term /= n_pos
        d_coeffs[:, rr, cc] = d_coeffs_pos.T

    total = weights.cls * cls_term + weights.box * box_term + weights.center * center_term + weights.mask * mask_term
    breakdown = LossBreakdown(float(total), float(cls_term), float(box_term), float(center_term), float(mask_term), n_pos)
    return breakdown, (d_cls, d_ctr, d_reg, d_coeffs, d_protos)


def _mask_loss(output: HeadOutput, owners, rr, cc, scene: Scene, scale: float):
    """Summed per-positive mask losses and gradients (scaled by ``scale``)."""
    k, hp, wp = output.protos.shape
    H, W = output.image_height, output.image_width
    ry = bilinear_matrix(hp, H)
    rx = bilinear_matrix(wp, W)
    coeff = output.coeffs[:, rr, cc].T  # (n, k)
    logits = np.einsum("nk,khw->nhw", coeff, output.protos)
    m = sigmoid(logits)
    up = ry @ m @ rx.T  # (n, H, W)

    inside = np.stack([box_membership(scene.instances[j].box, W, H) for j in owners])
    gt = np.stack([scene.instances[j].mask.bits for j in owners]).astype(np.float64)
    area = np.array([scene.instances[j].area for j in owners])

    u = np.clip(up, PROB_EPS, 1.0 - PROB_EPS)
    clipped = (up != u)
    bce = -(gt * np.log(u) + (1.0 - gt) * np.log1p(-u))
    per_pos = np.where(inside, bce, 0.0).sum(axis=(1, 2)) / area
    d_u = np.where(inside & ~clipped, (u - gt) / (u * (1.0 - u)), 0.0) * (scale / area)[:, None, None]
    d_m = ry.T @ d_u @ rx  # (n, hp, wp)
    d_logit = d_m * m * (1.0 - m)
    d_protos = np.einsum("nk,nhw->khw", coeff, d_logit)
    d_coeff = np.einsum("khw,nhw->nk", output.protos, d_logit)
    return float(per_pos.sum()), d_coeff, d_protos


def compute_loss(output: HeadOutput, targets: TargetMap, scene: Scene, weights: LossWeights = LossWeights()) -> LossBreakdown:
    return loss_and_grads(output, targets, scene, weights)[0]
