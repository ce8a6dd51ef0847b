"""A tiny fully-convolutional instance-segmentation head.

Layout (one head level)::

    image -> [conv3x3 -> relu -> avgpool2] x L   (trunk, stride 2**L)
    trunk -> cls branch: 2 x (conv3x3 -> relu) -> cls_out (c), ctr_out (1)
    trunk -> reg branch: 2 x (conv3x3 -> relu) -> reg_out (4)
    cls branch + reg branch -> coeff_out (k) -> tanh
    trunk @ proto stride -> 2 x (conv3x3 -> relu) -> proto_out 1x1 (k)

With ``fuse_branches=False`` the coefficient layer reads the classification
branch alone.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..prototypes import PrototypeStack
from . import layers as L

PRIOR_PROB = 0.01


@dataclass(frozen=True)
class ModelConfig:
    c: int = 1
    k: int = 32
    trunk_channels: tuple[int, ...] = (8, 16, 32)
    head_channels: int = 32
    head_stride: int = 8
    proto_stride: int = 4
    coeff_activation: str = "tanh"
    fuse_branches: bool = True
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "trunk_channels", tuple(int(v) for v in self.trunk_channels))
        if self.c < 1 or self.k < 1:
            raise ConfigurationError("c and k must be >= 1")
        for name in ("head_stride", "proto_stride"):
            s = getattr(self, name)
            if s < 1 or s & (s - 1):
                raise ConfigurationError(f"{name} must be a power of two, got {s}")
        if self.proto_stride > self.head_stride:
            raise ConfigurationError("proto_stride must not exceed head_stride")
        if self.proto_stride < 2:
            raise ConfigurationError("proto_stride must be at least 2 (prototypes come from the pooled trunk)")
        if len(self.trunk_channels) != self.depth:
            raise ConfigurationError(
                f"head_stride {self.head_stride} needs {self.depth} trunk stages,"
                f" got {len(self.trunk_channels)}"
            )
        if any(ch < 1 for ch in self.trunk_channels) or self.head_channels < 1:
            raise ConfigurationError("channel counts must be positive")
        if self.coeff_activation != "tanh":
            raise ConfigurationError(f"unsupported coefficient activation {self.coeff_activation!r}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")

    @property
    def depth(self) -> int:
        return int(math.log2(self.head_stride))

    @property
    def proto_stage(self) -> int:
        return int(math.log2(self.proto_stride)) - 1

    @property
    def outputs_per_location(self) -> int:
        return self.c + 1 + 4 + self.k

    def to_dict(self) -> dict:
        d = asdict(self)
        d["trunk_channels"] = list(self.trunk_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["trunk_channels"] = tuple(d.get("trunk_channels", cls.trunk_channels))
        return cls(**d)


def parameter_shapes(config: ModelConfig) -> dict[str, tuple[int, ...]]:
    shapes = {}
    cin = 1
    for i, ch in enumerate(config.trunk_channels):
        shapes[f"trunk{i}.w"] = (ch, cin, 3, 3)
        shapes[f"trunk{i}.b"] = (ch,)
        cin = ch
    hc = config.head_channels
    for branch in ("cls", "reg"):
        cin = config.trunk_channels[-1]
        for j in range(2):
            shapes[f"{branch}{j}.w"] = (hc, cin, 3, 3)
            shapes[f"{branch}{j}.b"] = (hc,)
            cin = hc
    for name, out in (("cls_out", config.c), ("ctr_out", 1), ("reg_out", 4), ("coeff_out", config.k)):
        shapes[f"{name}.w"] = (out, hc, 3, 3)
        shapes[f"{name}.b"] = (out,)
    cin = config.trunk_channels[config.proto_stage]
    for j in range(2):
        shapes[f"proto{j}.w"] = (hc, cin, 3, 3)
        shapes[f"proto{j}.b"] = (hc,)
        cin = hc
    shapes["proto_out.w"] = (config.k, hc, 1, 1)
    shapes["proto_out.b"] = (config.k,)
    return shapes


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()})

    def num_parameters(self) -> int:
        return sum(v.size for v in self.params.values())


def init_model(config: ModelConfig) -> Model:
    """He-uniform kernels, zero biases, classification bias at the rare-class prior."""
    rng = np.random.default_rng(config.seed)
    params = {}
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".w"):
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape)
        else:
            params[name] = np.zeros(shape)
    params["cls_out.b"][:] = -math.log((1.0 - PRIOR_PROB) / PRIOR_PROB)
    return Model(config, params)


@dataclass
class HeadOutput:
    """Raw head predictions on one ``rows x cols`` grid plus the prototypes."""

    cls_logits: np.ndarray  # (c, rows, cols)
    ctr_logits: np.ndarray  # (rows, cols)
    reg_raw: np.ndarray  # (4, rows, cols); distances are exp(raw) * stride
    coeffs: np.ndarray  # (k, rows, cols), tanh-activated
    protos: np.ndarray  # (k, hp, wp)
    stride: int
    image_width: int
    image_height: int
    cache: Optional[dict] = field(default=None, repr=False)

    @property
    def rows(self) -> int:
        return self.cls_logits.shape[1]

    @property
    def cols(self) -> int:
        return self.cls_logits.shape[2]

    @property
    def prototypes(self) -> PrototypeStack:
        return PrototypeStack(np.moveaxis(self.protos, 0, -1))

    def distances(self) -> np.ndarray:
        return np.exp(self.reg_raw) * self.stride

    def per_location(self) -> np.ndarray:
        """``(rows * cols, c + 1 + 4 + k)`` table of per-location outputs."""
        stacked = np.concatenate(
            [self.cls_logits, self.ctr_logits[None], self.reg_raw, self.coeffs], axis=0
        )
        return stacked.reshape(stacked.shape[0], -1).T


def _conv(params, name, x, cache):
    out, cols = L.conv_forward(x, params[name + ".w"], params[name + ".b"])
    cache[name] = (x.shape, cols)
    return out


def forward(model: Model, image: np.ndarray, keep_cache: bool = False) -> HeadOutput:
    cfg = model.config
    p = model.params
    img = np.asarray(image, dtype=np.float64)
    if img.ndim == 2:
        img = img[None]
    if img.ndim != 3 or img.shape[0] != 1:
        raise ShapeError(f"expected a single-channel image, got shape {np.shape(image)}")
    _, H, W = img.shape
    if H % cfg.head_stride or W % cfg.head_stride:
        raise ShapeError(f"image {W}x{H} not divisible by head stride {cfg.head_stride}")

    cache: dict = {}
    x = img
    feats = []
    for i in range(cfg.depth):
        pre = _conv(p, f"trunk{i}", x, cache)
        cache[f"trunk{i}.pre"] = pre
        x = L.avgpool2_forward(L.relu_forward(pre))
        feats.append(x)
    top = feats[-1]

    branch_out = {}
    for branch in ("cls", "reg"):
        h = top
        for j in range(2):
            pre = _conv(p, f"{branch}{j}", h, cache)
            cache[f"{branch}{j}.pre"] = pre
            h = L.relu_forward(pre)
        branch_out[branch] = h
    cls_feat, reg_feat = branch_out["cls"], branch_out["reg"]
    coeff_in = cls_feat + reg_feat if cfg.fuse_branches else cls_feat

    cls_logits = _conv(p, "cls_out", cls_feat, cache)
    ctr_logits = _conv(p, "ctr_out", cls_feat, cache)[0]
    reg_raw = _conv(p, "reg_out", reg_feat, cache)
    coeffs = np.tanh(_conv(p, "coeff_out", coeff_in, cache))

    h = feats[cfg.proto_stage]
    for j in range(2):
        pre = _conv(p, f"proto{j}", h, cache)
        cache[f"proto{j}.pre"] = pre
        h = L.relu_forward(pre)
    protos = _conv(p, "proto_out", h, cache)

    cache["coeffs"] = coeffs
    return HeadOutput(
        cls_logits, ctr_logits, reg_raw, coeffs, protos, cfg.head_stride, W, H,
        cache if keep_cache else None,
    )


def backward(model: Model, out: HeadOutput, d_cls, d_ctr, d_reg, d_coeffs, d_protos) -> dict[str, np.ndarray]:
    """Parameter gradients given gradients w.r.t. the head outputs.

    ``d_coeffs`` is taken w.r.t. the tanh-activated coefficients.
    """
    if out.cache is None:
        raise ValueError("forward(..., keep_cache=True) is required before backward")
    cfg = model.config
    p = model.params
    cache = out.cache
    grads = {}

    def conv_back(name, dout):
        x_shape, cols = cache[name]
        dx, dw, db = L.conv_backward(dout, x_shape, cols, p[name + ".w"])
        grads[name + ".w"] = dw
        grads[name + ".b"] = db
        return dx

    d_cls_feat = conv_back("cls_out", d_cls)
    d_cls_feat += conv_back("ctr_out", d_ctr[None])
    d_reg_feat = conv_back("reg_out", d_reg)
    d_coeff_raw = d_coeffs * (1.0 - cache["coeffs"] ** 2)
    d_coeff_in = conv_back("coeff_out", d_coeff_raw)
    d_cls_feat += d_coeff_in
    if cfg.fuse_branches:
        d_reg_feat += d_coeff_in

    d_top = 0.0
    for branch, dh in (("cls", d_cls_feat), ("reg", d_reg_feat)):
        for j in (1, 0):
            dh = conv_back(f"{branch}{j}", L.relu_backward(dh, cache[f"{branch}{j}.pre"]))
        d_top = d_top + dh

    dh = conv_back("proto_out", d_protos)
    for j in (1, 0):
        dh = conv_back(f"proto{j}", L.relu_backward(dh, cache[f"proto{j}.pre"]))
    d_feats = [0.0] * cfg.depth
    d_feats[cfg.proto_stage] = dh
    d_feats[-1] = d_feats[-1] + d_top

    d = 0.0
    for i in reversed(range(cfg.depth)):
        d = d + d_feats[i]
        d = L.avgpool2_backward(d)
        d = L.relu_backward(d, cache[f"trunk{i}.pre"])
        d = conv_back(f"trunk{i}", d)
    return {name: grads[name] for name in p}
