"""Instance masks as a sigmoid of a linear combination of shared prototypes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.special import expit

from .errors import IllPosedError, ShapeError
from .geometry import BBox, BinaryMask, SoftMask

FIT_EPS = 1e-3
DEFAULT_RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class PrototypeStack:
    values: np.ndarray  # (h, w, k)

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3 or min(v.shape) < 1:
            raise ShapeError(f"prototype stack must be h x w x k, got shape {v.shape}")
        if not np.isfinite(v).all():
            raise ShapeError("prototype values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def h(self) -> int:
        return self.values.shape[0]

    @property
    def w(self) -> int:
        return self.values.shape[1]

    @property
    def k(self) -> int:
        return self.values.shape[2]

    def first(self, k: int) -> "PrototypeStack":
        return PrototypeStack(self.values[:, :, :k])

    def design_matrix(self) -> np.ndarray:
        return self.values.reshape(-1, self.k)


def _coeffs(C) -> np.ndarray:
    c = np.asarray(getattr(C, "values", C), dtype=np.float64).ravel()
    if not np.isfinite(c).all():
        raise ShapeError("coefficients must be finite")
    return c


@dataclass(frozen=True, eq=False)
class CoefficientVector:
    values: np.ndarray

    def __post_init__(self):
        c = _coeffs(self.values).copy()
        if c.size < 1:
            raise ShapeError("coefficient vector is empty")
        c.setflags(write=False)
        object.__setattr__(self, "values", c)

    def __len__(self):
        return self.values.size


def mask_logits(P: PrototypeStack, C) -> np.ndarray:
    c = _coeffs(C)
    if c.size != P.k:
        raise ShapeError(f"{c.size} coefficients for {P.k} prototypes")
    return P.values @ c


def assemble(P: PrototypeStack, C) -> SoftMask:
    return SoftMask(expit(mask_logits(P, C)))


def bilinear_matrix(n_in: int, n_out: int) -> np.ndarray:
    """``(n_out, n_in)`` resampling weights, half-pixel centers, edge-clamped."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    out = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(out, (rows, lo), 1.0 - frac)
    np.add.at(out, (rows, hi), frac)
    return out


def resize_bilinear(values: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Resample the trailing two axes of ``values`` to ``(out_h, out_w)``."""
    h, w = values.shape[-2:]
    if (h, w) == (out_h, out_w):
        return np.array(values, dtype=np.float64)
    ry = bilinear_matrix(h, out_h)
    rx = bilinear_matrix(w, out_w)
    return ry @ values @ rx.T


def upsample_bilinear(mask: SoftMask, out_w: int, out_h: int) -> SoftMask:
    out = resize_bilinear(mask.values, out_w, out_h)
    return SoftMask(np.clip(out, 0.0, 1.0))


def box_membership(box: BBox, width: int, height: int) -> np.ndarray:
    """Pixels whose centers lie inside ``box`` (``BinaryMask.from_box`` as an array)."""
    return BinaryMask.from_box(box, width, height).bits


def crop_to_box(mask: SoftMask, box: BBox) -> SoftMask:
    inside = box_membership(box, mask.width, mask.height)
    return SoftMask(np.where(inside, mask.values, 0.0))


def binarize(mask: SoftMask, threshold: float = 0.5) -> BinaryMask:
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    return BinaryMask(mask.values > threshold)


def logit_target(target: BinaryMask, eps: float = FIT_EPS) -> np.ndarray:
    p = np.clip(target.bits.astype(np.float64), eps, 1.0 - eps)
    return np.log(p) - np.log1p(-p)


def fit_coefficients(P: PrototypeStack, target: BinaryMask, ridge: float = DEFAULT_RIDGE) -> CoefficientVector:
    """Ridge least-squares fit of coefficients to the target's clamped logits."""
    if (target.height, target.width) != (P.h, P.w):
        raise ShapeError(f"target is {target.width}x{target.height}, prototypes are {P.w}x{P.h}")
    if ridge < 0:
        raise ValueError("ridge must be non-negative")
    A = P.design_matrix()
    if ridge == 0 and P.k > A.shape[0]:
        raise IllPosedError(f"k={P.k} exceeds {A.shape[0]} pixels; use ridge > 0")
    z = logit_target(target).ravel()
    gram = A.T @ A + ridge * np.eye(P.k)
    try:
        factor = cho_factor(gram, lower=True, check_finite=False)
    except LinAlgError:
        raise IllPosedError("normal equations are singular; use ridge > 0") from None
    return CoefficientVector(cho_solve(factor, A.T @ z, check_finite=False))


def fit_residual(P: PrototypeStack, target: BinaryMask, C) -> float:
    r = P.design_matrix() @ _coeffs(C) - logit_target(target).ravel()
    return float(r @ r)


def reconstruct(P: PrototypeStack, C, threshold: float = 0.5) -> BinaryMask:
    return binarize(assemble(P, C), threshold)


# --------------------------------------------------------------------------
# bases for capacity experiments


def gt_basis(masks: Sequence[BinaryMask]) -> PrototypeStack:
    """One channel per mask, recoded to +1 on and -1 off."""
    if not masks:
        raise ShapeError("need at least one mask")
    return PrototypeStack(np.stack([2.0 * m.bits - 1.0 for m in masks], axis=-1))


def smooth_basis(h: int, w: int, k: int, seed: int = 0, max_freq: int = 6) -> PrototypeStack:
    """Constant channel followed by random low-frequency separable cosines.

    Channels are drawn in a fixed order, so the first ``k`` channels of a
    larger stack equal the stack built with ``k``.
    """
    rng = np.random.default_rng(seed)
    ys = (np.arange(h) + 0.5) / h
    xs = (np.arange(w) + 0.5) / w
    chans = [np.ones((h, w))]
    for _ in range(k - 1):
        fx, fy = rng.integers(0, max_freq + 1, size=2)
        px, py = rng.uniform(0, 2 * np.pi, size=2)
        chans.append(np.outer(np.cos(np.pi * fy * ys + py), np.cos(np.pi * fx * xs + px)))
    return PrototypeStack(np.stack(chans[:k], axis=-1))
