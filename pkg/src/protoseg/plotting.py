"""Report figures written straight to PNG files (headless Agg backend)."""

from __future__ import annotations

import io
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _to_png(fig) -> bytes:
    buf = io.BytesIO()
    fig.savefig(buf, format="png", dpi=100, metadata=_PNG_META)
    plt.close(fig)
    return buf.getvalue()


def loss_curve_png(curve) -> bytes:
    """Mean total loss and per-term means against epoch."""
    fig, ax = plt.subplots(figsize=(6, 4))
    if curve:
        epochs = [r.epoch for r in curve]
        ax.plot(epochs, [r.mean_total for r in curve], "k-", lw=2, label="total")
        for term in curve[0].means:
            ax.plot(epochs, [r.means[term] for r in curve], lw=1, label=term)
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean loss")
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _to_png(fig)


def iou_vs_k_png(rows: Sequence[Mapping], title: str = "") -> bytes:
    """``rows`` carry ``k`` and ``mean_iou`` (and optionally ``min_iou``)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    ks = [r["k"] for r in rows]
    ax.plot(ks, [r["mean_iou"] for r in rows], "o-", label="mean")
    if rows and "min_iou" in rows[0]:
        ax.plot(ks, [r["min_iou"] for r in rows], "s--", alpha=0.6, label="min")
    if ks and min(ks) > 0:
        ax.set_xscale("log", base=2)
    ax.set_xlabel("prototypes k")
    ax.set_ylabel("reconstruction IoU")
    ax.set_ylim(0, 1.02)
    ax.set_title(title)
    ax.legend()
    ax.grid(alpha=0.3)
    return _to_png(fig)


def assignment_png(scene, area_map, center_map, level: int = 0) -> bytes:
    """Owner maps of both assignment rules at one level, with steals marked."""
    a = area_map.levels[level]
    c = center_map.levels[level]
    fig, axes = plt.subplots(1, 2, figsize=(9, 4.5))
    vmax = max(1, len(scene.instances) - 1)
    for ax, lv, name in ((axes[0], a, "area-minimal"), (axes[1], c, "center-aware")):
        s = lv.level.stride
        ax.imshow(np.ma.masked_less(lv.owner, 0), cmap="tab10", vmin=0, vmax=max(9, vmax),
                  extent=(0, lv.cols * s, lv.rows * s, 0), interpolation="nearest")
        for inst in scene.instances:
            b = inst.box
            ax.add_patch(plt.Rectangle((b.x1, b.y1), b.width, b.height, fill=False, ec="k", lw=1))
        rr, cc = np.nonzero(a.owner != c.owner)
        ax.plot(s / 2 + cc * s, s / 2 + rr * s, "rx", ms=8)
        ax.set_xlim(0, scene.width)
        ax.set_ylim(scene.height, 0)
        ax.set_title(f"{name}, stride {s}")
    return _to_png(fig)


def pr_curves_png(reports: Mapping[str, object]) -> bytes:
    """Precision/recall at the first IoU threshold, one line per (kind, class)."""
    fig, ax = plt.subplots(figsize=(5, 4))
    for kind, rep in reports.items():
        for cls, (recall, precision) in sorted(rep.pr_curves.items()):
            ax.step(recall, precision, where="post", label=f"{kind} class {cls}")
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1.02)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3)
    return _to_png(fig)
