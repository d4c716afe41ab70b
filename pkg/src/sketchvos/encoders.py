"""Toy convolutional encoders for frames, frame+aux values, and sketches.

Each encoder is four stride-2 stages of [conv3x3 -> relu] x2. For an H x W
input the emitted levels are L3 (stride 4), L4 (stride 8) and L5 (stride 16);
the frame encoder adds a linear 1x1 key head on L5, the sketch encoder adds a
global-average-pooled vector of its L5 map.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ShapeError
from .layers import Conv2d


@dataclass
class EncoderConfig:
    widths: tuple = (16, 32, 64, 96)
    key_dim: int = 16
    value_dim: int = 32
    attn_dim: int = 32
    decoder_dim: int = 32

    def __post_init__(self):
        if any(w < 1 for w in self.widths) or min(self.key_dim, self.value_dim,
                                                  self.attn_dim, self.decoder_dim) < 1:
            raise ValueError("all channel dims must be >= 1")
        if self.key_dim > self.widths[-1]:
            raise ValueError("key_dim must not exceed the deepest stage width")


@dataclass
class VisualFeatures:
    levels: dict  # {"L3": C3 x H/4 x W/4, "L4": C4 x H/8 x W/8, "L5": C5 x H/16 x W/16}
    key: ad.Tensor  # C_k x H/16 x W/16


@dataclass
class SketchFeatures:
    levels: dict  # {"L4", "L5"}
    gap: ad.Tensor  # C5 x 1 x 1


class _Backbone:
    """Four stride-2 stages; stage k output has stride 2^k."""

    def __init__(self, rng, cin, widths, dtype, name):
        self.stages = []
        prev = cin
        for i, w in enumerate(widths):
            a = Conv2d(rng, prev, w, k=3, stride=2, dtype=dtype,
                       name=f"{name}.s{i}a")
            b = Conv2d(rng, w, w, k=3, stride=1, dtype=dtype,
                       name=f"{name}.s{i}b")
            self.stages.append((a, b))
            prev = w

    def __call__(self, x):
        outs = []
        for a, b in self.stages:
            x = ad.relu(a(x))
            x = ad.relu(b(x))
            outs.append(x)
        return outs  # strides 2, 4, 8, 16

    def params(self):
        return [p for a, b in self.stages for p in a.params() + b.params()]


def _check_divisible(x, cin):
    c, h, w = x.shape
    if c != cin:
        raise ShapeError(f"expected {cin} input channels, got {c}")
    if h % 16 or w % 16:
        raise ShapeError(f"spatial size {h}x{w} not divisible by 16")


class FrameEncoder:
    def __init__(self, rng, cfg: EncoderConfig, dtype=np.float32):
        self.cfg = cfg
        self.backbone = _Backbone(rng, 3, cfg.widths, dtype, "frame")
        self.key_head = Conv2d(rng, cfg.widths[-1], cfg.key_dim, k=1, dtype=dtype,
                               name="frame.key")

    def __call__(self, frame) -> VisualFeatures:
        _check_divisible(frame, 3)
        s2, s4, s8, s16 = self.backbone(frame)
        return VisualFeatures(levels={"L3": s4, "L4": s8, "L5": s16},
                              key=self.key_head(s16))

    def params(self):
        return self.backbone.params() + self.key_head.params()


class ValueEncoder:
    """Encodes RGB + one aux channel (mask or sketch raster) to a value map."""

    def __init__(self, rng, cfg: EncoderConfig, dtype=np.float32):
        self.cfg = cfg
        self.backbone = _Backbone(rng, 4, cfg.widths, dtype, "value")
        self.head = Conv2d(rng, cfg.widths[-1], cfg.value_dim, k=1, dtype=dtype,
                           name="value.head")

    def __call__(self, frame, aux):
        if aux.shape != frame.shape[1:]:
            raise ShapeError(f"aux size {aux.shape} != frame size {frame.shape[1:]}")
        aux_t = aux if isinstance(aux, ad.Tensor) else ad.Tensor(
            np.asarray(aux, dtype=frame.dtype))
        x = ad.concat([frame, ad.reshape(aux_t, (1,) + aux_t.shape)], axis=0)
        _check_divisible(x, 4)
        s16 = self.backbone(x)[-1]
        return self.head(s16)

    def params(self):
        return self.backbone.params() + self.head.params()


class SketchEncoder:
    def __init__(self, rng, cfg: EncoderConfig, dtype=np.float32):
        self.cfg = cfg
        self.backbone = _Backbone(rng, 1, cfg.widths, dtype, "sketch")

    def __call__(self, raster) -> SketchFeatures:
        if not isinstance(raster, ad.Tensor):
            raster = ad.Tensor(np.asarray(raster, dtype=self.backbone.stages[0][0].w.dtype))
        if raster.ndim == 2:
            raster = ad.reshape(raster, (1,) + raster.shape)
        _check_divisible(raster, 1)
        _, _, s8, s16 = self.backbone(raster)
        gap = ad.reshape(ad.mean(s16, axis=(1, 2)), (-1, 1, 1))
        return SketchFeatures(levels={"L4": s8, "L5": s16}, gap=gap)

    def params(self):
        return self.backbone.params()


def project(feature, head_conv: Conv2d):
    """1x1-project a C x h x w map and flatten spatial to columns: C' x (h*w)."""
    out = head_conv(feature)
    c = out.shape[0]
    return ad.reshape(out, (c, -1))
