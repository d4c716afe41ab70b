"""Reverse-mode autodiff over numpy arrays.

Small operator set sized for this project: elementwise arithmetic, matmul,
relu/sigmoid, softmax, 2-d convolution, bilinear resize, BCE loss, plus the
Adam update. float32 is the training dtype; gradient checking runs the same
graph in float64.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConfigError, NumericalDomainError, ShapeError, StateError

BCE_EPS = 1e-7


class Tensor:
    """A dense array plus the bookkeeping needed for backward()."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float32)
        self.grad = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in _parents)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data.copy())

    def _accum(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = g.astype(self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward() requires a scalar output")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                topo.append(node)
            else:
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
            # free intermediate grads lazily; leaves keep theirs
            if node._parents and node is not self:
                node.grad = None

    # -- operator sugar ------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other, self.dtype))

    def __radd__(self, other):
        return add(_wrap(other, self.dtype), self)

    def __sub__(self, other):
        return add(self, mul(_wrap(other, self.dtype), -1.0))

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return mul(self, other)
        return multiply(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """Learnable tensor with Adam state."""

    __slots__ = ("m", "v", "step_count", "name")

    def __init__(self, data, name=""):
        super().__init__(data, requires_grad=True)
        self.name = name
        self.m = np.zeros_like(self.data)
        self.v = np.zeros_like(self.data)
        self.step_count = 0

    def zero_grad(self):
        self.grad = None


def _wrap(x, dtype):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _unbroadcast(g, shape):
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise / linear algebra -------------------------------------------


def add(a, b):
    out = Tensor(a.data + b.data, _parents=(a, b))

    def bwd(g):
        a._accum(_unbroadcast(g, a.shape))
        b._accum(_unbroadcast(g, b.shape))

    out._backward = bwd
    return out


def multiply(a, b):
    out = Tensor(a.data * b.data, _parents=(a, b))

    def bwd(g):
        a._accum(_unbroadcast(g * b.data, a.shape))
        b._accum(_unbroadcast(g * a.data, b.shape))

    out._backward = bwd
    return out


def mul(a, s):
    s = float(s)
    out = Tensor(a.data * s, _parents=(a,))
    out._backward = lambda g: a._accum(g * s)
    return out


def matmul(a, b):
    if a.data.shape[-1] != b.data.shape[0]:
        raise ShapeError(f"matmul mismatch {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _parents=(a, b))

    def bwd(g):
        if a.requires_grad:
            a._accum(g @ b.data.T)
        if b.requires_grad:
            b._accum(a.data.T @ g)

    out._backward = bwd
    return out


def transpose(a, axes=None):
    out = Tensor(np.transpose(a.data, axes), _parents=(a,))
    inv = None if axes is None else np.argsort(axes)
    out._backward = lambda g: a._accum(np.transpose(g, inv))
    return out


def reshape(a, shape):
    out = Tensor(a.data.reshape(shape), _parents=(a,))
    out._backward = lambda g: a._accum(g.reshape(a.shape))
    return out


def concat(tensors, axis=0):
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                 _parents=tuple(tensors))
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            t._accum(g[tuple(idx)])

    out._backward = bwd
    return out


def mean(a, axis=None, keepdims=False):
    out = Tensor(a.data.mean(axis=axis, keepdims=keepdims), _parents=(a,))
    n = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape) / n)

    out._backward = bwd
    return out


def sum_(a, axis=None, keepdims=False):
    out = Tensor(a.data.sum(axis=axis, keepdims=keepdims), _parents=(a,))

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.shape).astype(a.dtype))

    out._backward = bwd
    return out


def relu(a):
    mask = a.data > 0
    out = Tensor(a.data * mask, _parents=(a,))
    out._backward = lambda g: a._accum(g * mask)
    return out


def sigmoid(a):
    s = 1.0 / (1.0 + np.exp(-np.clip(a.data, -60, 60)))
    out = Tensor(s.astype(a.dtype), _parents=(a,))
    out._backward = lambda g: a._accum(g * s * (1.0 - s))
    return out


def softmax(a, axis):
    if not np.all(np.isfinite(a.data)):
        raise NumericalDomainError("softmax: non-finite input")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(s.astype(a.dtype), _parents=(a,))

    def bwd(g):
        dot = (g * s).sum(axis=axis, keepdims=True)
        a._accum((g - dot) * s)

    out._backward = bwd
    return out


def scaled_dot_scores(q, k, channels):
    """Pairwise dot products between columns of q (C x P) and k (C x R), scaled by 1/sqrt(C)."""
    if q.shape[0] != k.shape[0] or q.shape[0] != channels:
        raise ShapeError(f"channel mismatch: q {q.shape}, k {k.shape}, C={channels}")
    return mul(matmul(transpose(q), k), 1.0 / math.sqrt(channels))


# -- convolution -------------------------------------------------------------


def conv2d(x, w, b, stride=1, pad=0):
    """x: Cin x H x W, w: Cout x Cin x k x k, b: Cout. Zero padding."""
    cin, h, wd = x.shape
    cout, cin_w, k, k2 = w.shape
    if cin != cin_w or k != k2:
        raise ShapeError(f"conv2d weight mismatch: x {x.shape}, w {w.shape}")
    if k % 2 != 1 or pad < 0 or stride < 1:
        raise ConfigError("conv2d: k must be odd, pad >= 0, stride >= 1")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    if ho < 1 or wo < 1:
        raise ShapeError("conv2d: output dimension < 1")

    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad))) if pad else x.data
    out_data = np.broadcast_to(b.data[:, None, None], (cout, ho, wo)).astype(x.dtype).copy()
    for di in range(k):
        for dj in range(k):
            patch = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
            out_data += np.tensordot(w.data[:, :, di, dj], patch, axes=([1], [0]))

    out = Tensor(out_data, _parents=(x, w, b))

    def bwd(g):
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for di in range(k):
                for dj in range(k):
                    patch = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
                    gw[:, :, di, dj] = np.tensordot(g, patch, axes=([1, 2], [1, 2]))
            w._accum(gw)
        if b.requires_grad:
            b._accum(g.sum(axis=(1, 2)))
        if x.requires_grad:
            gxp = np.zeros((cin, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
            for di in range(k):
                for dj in range(k):
                    gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += \
                        np.tensordot(w.data[:, :, di, dj], g, axes=([0], [0]))
            x._accum(gxp[:, pad:pad + h, pad:pad + wd] if pad else gxp)

    out._backward = bwd
    return out


# -- bilinear resize ---------------------------------------------------------


def _resize_coords(n_out, n_in, dtype):
    # half-pixel centers (align_corners=False)
    src = (np.arange(n_out, dtype=dtype) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = (src - lo).astype(dtype)
    return lo, hi, frac


def bilinear_resize(x, out_hw):
    """x: C x H x W -> C x H' x W', half-pixel-center sampling."""
    c, h, w = x.shape
    ho, wo = out_hw
    if ho < 1 or wo < 1:
        raise ShapeError("bilinear_resize: output size must be >= 1")
    ylo, yhi, fy = _resize_coords(ho, h, x.data.dtype)
    xlo, xhi, fx = _resize_coords(wo, w, x.data.dtype)
    fy = fy[:, None]
    fx = fx[None, :]

    d = x.data
    top = d[:, ylo][:, :, xlo] * (1 - fx) + d[:, ylo][:, :, xhi] * fx
    bot = d[:, yhi][:, :, xlo] * (1 - fx) + d[:, yhi][:, :, xhi] * fx
    out = Tensor(top * (1 - fy) + bot * fy, _parents=(x,))

    def bwd(g):
        gx = np.zeros_like(x.data)
        for wy, rows in ((1 - fy, ylo), (fy, yhi)):
            for wx, cols in ((1 - fx, xlo), (fx, xhi)):
                contrib = g * wy * wx
                np.add.at(gx, (slice(None), rows[:, None], cols[None, :]), contrib)
        x._accum(gx)

    out._backward = bwd
    return out


# -- loss --------------------------------------------------------------------


def bce_loss(pred_prob, target):
    """Mean binary cross-entropy. Predictions clamped to [eps, 1-eps]."""
    t = target.data if isinstance(target, Tensor) else np.asarray(target)
    if not np.all((t == 0) | (t == 1)):
        raise NumericalDomainError("bce_loss: target values must be 0 or 1")
    if pred_prob.shape != t.shape:
        raise ShapeError(f"bce_loss shape mismatch {pred_prob.shape} vs {t.shape}")
    p = np.clip(pred_prob.data, BCE_EPS, 1.0 - BCE_EPS)
    inside = (pred_prob.data > BCE_EPS) & (pred_prob.data < 1.0 - BCE_EPS)
    loss = -(t * np.log(p) + (1 - t) * np.log(1 - p)).mean()
    out = Tensor(np.asarray(loss, dtype=pred_prob.dtype), _parents=(pred_prob,))

    def bwd(g):
        gp = np.where(inside, (p - t) / (p * (1 - p)), 0.0) / t.size
        pred_prob._accum(g * gp.astype(pred_prob.dtype))

    out._backward = bwd
    return out


# -- optimizer ---------------------------------------------------------------


def adam_step(params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One Adam update over `params`; gradients must be populated (None counts as zero)."""
    if lr <= 0:
        raise ConfigError("adam_step: lr must be > 0")
    for p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        p.step_count += 1
        p.m = beta1 * p.m + (1 - beta1) * g
        p.v = beta2 * p.v + (1 - beta2) * g * g
        mhat = p.m / (1 - beta1 ** p.step_count)
        vhat = p.v / (1 - beta2 ** p.step_count)
        p.data -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.data.dtype)


def zero_grads(params):
    for p in params:
        p.grad = None
