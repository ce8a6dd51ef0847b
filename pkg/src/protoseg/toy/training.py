"""Gradients, SGD training and model serialization for the toy head."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from ..assignment import LevelSpec, TargetMap, build_targets
from ..errors import ConfigurationError, SchemaError, TrainingDivergedError
from ..geometry import Scene
from ..ingest import _load_json
from ..synth import render_image, stream
from .loss import TERMS, LossBreakdown, LossWeights, loss_and_grads
from .network import Model, ModelConfig, backward, forward, parameter_shapes

logger = logging.getLogger(__name__)

TAG_SHUFFLE = 101


def head_level(config: ModelConfig) -> LevelSpec:
    return LevelSpec(config.head_stride, 0.0, math.inf)


def toy_targets(scene: Scene, config: ModelConfig, mode: str = "center") -> TargetMap:
    return build_targets(scene, [head_level(config)], mode)


def gradients(model: Model, image, targets: TargetMap, scene: Scene,
              weights: LossWeights = LossWeights()) -> tuple[dict[str, np.ndarray], LossBreakdown]:
    out = forward(model, image, keep_cache=True)
    breakdown, dout = loss_and_grads(out, targets, scene, weights)
    return backward(model, out, *dout), breakdown


def total_loss(model: Model, image, targets: TargetMap, scene: Scene, weights: LossWeights = LossWeights()) -> float:
    out = forward(model, image)
    return loss_and_grads(out, targets, scene, weights)[0].total


@dataclass(frozen=True)
class TrainHyper:
    lr: float = 0.01
    epochs: int = 20
    momentum: float = 0.9
    batch: int = 1
    seed: int = 0
    mode: str = "center"
    weights: LossWeights = field(default_factory=LossWeights)
    clip_norm: Optional[float] = None
    lr_decay_epochs: tuple[int, ...] = ()
    lr_decay: float = 0.1

    def lr_at(self, epoch: int) -> float:
        return self.lr * self.lr_decay ** sum(1 for e in self.lr_decay_epochs if epoch > e)

    def __post_init__(self):
        if self.batch != 1:
            raise ConfigurationError("only batch=1 is supported")
        if self.lr < 0 or self.epochs < 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError("lr, epochs must be >= 0 and momentum in [0, 1)")
        if self.mode not in ("area", "center"):
            raise ConfigurationError(f"unknown assignment mode {self.mode!r}")


@dataclass
class EpochRecord:
    epoch: int
    mean_total: float
    means: dict[str, float]


def shuffled(n: int, seed: int, epoch: int) -> list[int]:
    """Fisher-Yates permutation drawn from a splitmix64 stream."""
    rng = stream(seed, TAG_SHUFFLE, epoch)
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = rng.randint(0, i)
        order[i], order[j] = order[j], order[i]
    return order


def train(model: Model, dataset: Sequence[Scene], hyper: TrainHyper = TrainHyper(),
          progress: Optional[Callable[[EpochRecord], None]] = None) -> tuple[Model, list[EpochRecord]]:
    """Plain SGD with momentum, one scene per step.  Returns a trained copy."""
    if not dataset:
        raise ConfigurationError("training needs a non-empty dataset")
    model = model.copy()
    images = [render_image(s) for s in dataset]
    targets = [toy_targets(s, model.config, hyper.mode) for s in dataset]
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    curve = []
    step = 0
    for epoch in range(1, hyper.epochs + 1):
        sums = dict.fromkeys(("total",) + TERMS, 0.0)
        lr = hyper.lr_at(epoch)
        for idx in shuffled(len(dataset), hyper.seed, epoch):
            grads, br = gradients(model, images[idx], targets[idx], dataset[idx], hyper.weights)
            if not math.isfinite(br.total):
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch}, step {step} (scene {dataset[idx].id!r}): {br.as_dict()}",
                    epoch, step,
                )
            if hyper.clip_norm is not None:
                norm = math.sqrt(sum(float((g * g).sum()) for g in grads.values()))
                if norm > hyper.clip_norm:
                    scale = hyper.clip_norm / norm
                    grads = {k: g * scale for k, g in grads.items()}
            for name, g in grads.items():
                v = velocity[name]
                v *= hyper.momentum
                v += g
                model.params[name] -= lr * v
            sums["total"] += br.total
            for t in TERMS:
                sums[t] += getattr(br, t)
            step += 1
        n = len(dataset)
        rec = EpochRecord(epoch, sums["total"] / n, {t: sums[t] / n for t in TERMS})
        curve.append(rec)
        logger.info("epoch %d mean loss %.6f", epoch, rec.mean_total)
        if progress is not None:
            progress(rec)
    for name, v in model.params.items():
        if not np.isfinite(v).all():
            raise TrainingDivergedError(f"parameter {name} became non-finite", hyper.epochs, step)
    return model, curve


def curve_to_csv(curve: Sequence[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "mean_total"] + [f"mean_{t}" for t in TERMS])
    for rec in curve:
        writer.writerow([rec.epoch, repr(rec.mean_total)] + [repr(rec.means[t]) for t in TERMS])
    return buf.getvalue()


# --------------------------------------------------------------------------
# serialization


def model_to_json(model: Model) -> str:
    params = {
        name: {"shape": list(v.shape), "values": [repr(float(x)) for x in v.ravel()]}
        for name, v in model.params.items()
    }
    return json.dumps({"config": model.config.to_dict(), "parameters": params}, separators=(",", ":"))


def model_from_json(data) -> Model:
    doc = _load_json(data)
    if not isinstance(doc, dict) or "config" not in doc or "parameters" not in doc:
        raise SchemaError("model file needs 'config' and 'parameters'")
    try:
        config = ModelConfig.from_dict(doc["config"])
    except TypeError as exc:
        raise SchemaError(f"bad model config: {exc}") from None
    shapes = parameter_shapes(config)
    params = {}
    for name, shape in shapes.items():
        entry = doc["parameters"].get(name)
        if entry is None:
            raise SchemaError(f"model file lacks parameter {name!r}")
        if tuple(entry["shape"]) != shape:
            raise SchemaError(f"parameter {name!r} has shape {entry['shape']}, expected {list(shape)}")
        values = np.array([float(x) for x in entry["values"]], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise SchemaError(f"parameter {name!r} has {values.size} values")
        params[name] = values.reshape(shape)
    return Model(config, params)
