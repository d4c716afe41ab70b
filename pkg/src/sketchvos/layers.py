"""Parameterized layers built on the autodiff ops."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter


def kaiming(rng, shape, fan_in, dtype):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def bias_init(rng, n, dtype):
    # small nonzero values keep constant-input regions (sketch background,
    # zero padding) off the exact relu kink, where finite differences and the
    # analytic gradient legitimately disagree
    return rng.uniform(-0.05, 0.05, size=n).astype(dtype)


class Conv2d:
    def __init__(self, rng, cin, cout, k=3, stride=1, pad=None, dtype=np.float32,
                 name="conv"):
        if pad is None:
            pad = k // 2
        self.stride = stride
        self.pad = pad
        self.w = Parameter(kaiming(rng, (cout, cin, k, k), cin * k * k, dtype),
                           name=f"{name}.w")
        self.b = Parameter(bias_init(rng, cout, dtype), name=f"{name}.b")

    def __call__(self, x):
        return ad.conv2d(x, self.w, self.b, stride=self.stride, pad=self.pad)

    def params(self):
        return [self.w, self.b]


class Linear:
    def __init__(self, rng, nin, nout, dtype=np.float32, name="fc"):
        self.w = Parameter(kaiming(rng, (nout, nin), nin, dtype), name=f"{name}.w")
        self.b = Parameter(bias_init(rng, nout, dtype), name=f"{name}.b")

    def __call__(self, x):
        # x: nin vector (as nin x 1 tensor) -> nout x 1
        return ad.matmul(self.w, x) + ad.reshape(self.b, (-1, 1))

    def params(self):
        return [self.w, self.b]
