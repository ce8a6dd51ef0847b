"""Numpy instance-segmentation head with hand-written backpropagation."""

from .inference import PredictParams, decode_detections, nms, predict
from .loss import LossBreakdown, LossWeights, compute_loss
from .network import HeadOutput, Model, ModelConfig, forward, init_model
from .training import TrainHyper, gradients, model_from_json, model_to_json, toy_targets, train

__all__ = [
    "HeadOutput",
    "LossBreakdown",
    "LossWeights",
    "Model",
    "ModelConfig",
    "PredictParams",
    "TrainHyper",
    "compute_loss",
    "decode_detections",
    "forward",
    "gradients",
    "init_model",
    "model_from_json",
    "model_to_json",
    "nms",
    "predict",
    "toy_targets",
    "train",
]
