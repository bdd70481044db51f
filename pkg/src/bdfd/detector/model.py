"""The desk-scale single-shot face detector.

Three conv3x3+ReLU+maxpool stages followed by a 1x1 head that emits 15 raw
targets per anchor. The feature map after the last pool has stride 8, so the
head grid lines up with a single stride-8 anchor level.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..anchors import (CONF_THRESHOLD, DESK_CONFIG, NMS_THRESHOLD, AnchorConfig, AnchorSet,
                       decode_predictions, generate_anchors, nms)
from ..core import N_TARGETS, Detection
from . import layers

STRIDE = 8
WIDTHS = (16, 32, 64)


def architecture(widths=WIDTHS, anchors_per_cell: int = 2) -> list[tuple[str, tuple[int, ...]]]:
    """(name, shape) of every parameter tensor, in checkpoint order."""
    specs = []
    c_in = 3
    for i, c_out in enumerate(widths, start=1):
        specs += [(f"conv{i}.weight", (c_out, c_in, 3, 3)), (f"conv{i}.bias", (c_out,))]
        c_in = c_out
    specs += [("head.weight", (anchors_per_cell * N_TARGETS, c_in, 1, 1)),
              ("head.bias", (anchors_per_cell * N_TARGETS,))]
    return specs


@dataclass
class DetectorModel:
    params: dict[str, np.ndarray]
    anchor_config: AnchorConfig = DESK_CONFIG
    widths: tuple[int, ...] = WIDTHS
    anchors: AnchorSet = field(init=False, repr=False)

    def __post_init__(self):
        cfg = self.anchor_config
        if len(cfg.levels) != 1 or cfg.levels[0][0] != STRIDE:
            raise ValueError("the detector head supports one anchor level with stride 8")
        expected = dict(architecture(self.widths, len(cfg.levels[0][1])))
        if set(expected) != set(self.params):
            raise ValueError(f"parameter names {sorted(self.params)} do not match the architecture")
        for name, shape in expected.items():
            if tuple(self.params[name].shape) != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {self.params[name].shape}")
            if not np.all(np.isfinite(self.params[name])):
                raise ValueError(f"{name} contains non-finite values")
        self.anchors = generate_anchors(cfg)

    @property
    def input_size(self) -> int:
        return self.anchor_config.image_size

    def copy(self, dtype=None) -> "DetectorModel":
        return DetectorModel({k: v.astype(dtype or v.dtype, copy=True) for k, v in self.params.items()},
                             self.anchor_config, self.widths)


def init_model(rng: np.random.Generator, anchor_config: AnchorConfig = DESK_CONFIG,
               widths=WIDTHS, dtype=np.float32) -> DetectorModel:
    """He-normal kernels, zero biases."""
    params = {}
    for name, shape in architecture(widths, len(anchor_config.levels[0][1])):
        if name.endswith(".bias"):
            params[name] = np.zeros(shape, dtype=dtype)
        else:
            fan_in = int(np.prod(shape[1:]))
            params[name] = (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)
    return DetectorModel(params, anchor_config, tuple(widths))


def to_input(images) -> np.ndarray:
    """Stack [0, 1] HWC images into an NHWC batch scaled to [-1, 1]."""
    x = np.asarray(images)
    if x.ndim == 3:
        x = x[None]
    return x * 2.0 - 1.0


def forward_batch(model: DetectorModel, x: np.ndarray):
    """x: (N, S, S, 3) in [-1, 1]. Returns raw predictions (N, a, 15) and a cache."""
    s = model.input_size
    if x.shape[1:] != (s, s, 3):
        raise ValueError(f"expected input of shape (N, {s}, {s}, 3), got {x.shape}")
    p = model.params
    x = x.astype(p["head.weight"].dtype, copy=False)
    caches = []
    h = x
    for i in range(1, len(model.widths) + 1):
        h, c_conv = layers.conv_forward(h, p[f"conv{i}.weight"], p[f"conv{i}.bias"])
        h, c_relu = layers.relu_forward(h)
        h, c_pool = layers.maxpool_forward(h)
        caches.append((c_conv, c_relu, c_pool))
    out, c_head = layers.conv_forward(h, p["head.weight"], p["head.bias"])
    n = x.shape[0]
    return out.reshape(n, -1, N_TARGETS), (caches, c_head, out.shape)


def backward_batch(model: DetectorModel, draw: np.ndarray, cache, need_input_grad=False):
    """Gradients of a scalar w.r.t. every parameter given d(scalar)/d(raw)."""
    caches, c_head, out_shape = cache
    grads = {}
    d, grads["head.weight"], grads["head.bias"] = layers.conv_backward(
        draw.reshape(out_shape), c_head)
    for i in range(len(model.widths), 0, -1):
        c_conv, c_relu, c_pool = caches[i - 1]
        d = layers.maxpool_backward(d, c_pool)
        d = layers.relu_backward(d, c_relu)
        if i == 1 and not need_input_grad:
            grads["conv1.weight"], grads["conv1.bias"] = _conv_param_grads(d, c_conv)
            break
        d, grads[f"conv{i}.weight"], grads[f"conv{i}.bias"] = layers.conv_backward(d, c_conv)
    if need_input_grad:
        return grads, d
    return grads


def _conv_param_grads(dout, cache):
    _, cols, w = cache
    d2 = dout.reshape(-1, w.shape[0])
    return (d2.T @ cols).reshape(w.shape), d2.sum(axis=0)


def forward(model: DetectorModel, image: np.ndarray) -> np.ndarray:
    """Raw (a, 15) predictions for one [0, 1] image."""
    raw, _ = forward_batch(model, to_input(image))
    return raw[0]


def detect(model: DetectorModel, image: np.ndarray, conf_threshold: float = CONF_THRESHOLD,
           nms_threshold: float = NMS_THRESHOLD) -> list[Detection]:
    for t in (conf_threshold, nms_threshold):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"thresholds must be in [0, 1], got {t}")
    raw = forward(model, image)
    return nms(decode_predictions(raw, model.anchors, conf_threshold), nms_threshold)


def detect_many(model: DetectorModel, images, conf_threshold: float = CONF_THRESHOLD,
                nms_threshold: float = NMS_THRESHOLD, batch_size: int = 64) -> list[list[Detection]]:
    out = []
    for i in range(0, len(images), batch_size):
        raw, _ = forward_batch(model, to_input(np.stack(images[i:i + batch_size])))
        for r in raw:
            out.append(nms(decode_predictions(r, model.anchors, conf_threshold), nms_threshold))
    return out
