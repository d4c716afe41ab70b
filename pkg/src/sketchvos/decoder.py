"""Decoder: stride-16 features -> full-resolution mask logits via two
skip-refinement blocks, a small segmentation head, and a final bilinear resize."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ShapeError
from .layers import Conv2d

SKIP_CH = 16
HEAD_HIDDEN = 16


class SegHead:
    """3x3 conv (C_dec -> 16) + relu + 1x1 conv (16 -> 1)."""

    def __init__(self, rng, c_dec, dtype=np.float32, source="learned"):
        self.c_dec = c_dec
        self.source = source
        self.w1 = Conv2d(rng, c_dec, HEAD_HIDDEN, k=3, dtype=dtype, name="head.w1")
        self.w2 = Conv2d(rng, HEAD_HIDDEN, 1, k=1, dtype=dtype, name="head.w2")

    def __call__(self, x):
        return self.w2(ad.relu(self.w1(x)))

    def param_count(self):
        return sum(p.data.size for p in self.params())

    def params(self):
        return self.w1.params() + self.w2.params()

    def install_flat(self, flat):
        """Install a flat parameter vector (a Tensor) as this head's weights.

        Used by the hypernet design: the head then computes with the generated
        values and gradients flow back into the generator, not into w1/w2.
        """
        shapes = [p.shape for p in self.params()]
        sizes = [int(np.prod(s)) for s in shapes]
        if flat.shape != (sum(sizes),):
            raise ShapeError(f"expected {sum(sizes)} head parameters, got {flat.shape}")
        pieces = []
        off = 0
        for s, n in zip(shapes, sizes):
            pieces.append(ad.reshape(_slice1d(flat, off, off + n), s))
            off += n
        head = _InstalledHead(pieces, self.w1, self.w2)
        return head


def _slice1d(t, lo, hi):
    out = ad.Tensor(t.data[lo:hi], _parents=(t,))

    def bwd(g):
        full = np.zeros_like(t.data)
        full[lo:hi] = g
        t._accum(full)

    out._backward = bwd
    return out


class _InstalledHead:
    """SegHead forward using externally supplied weight tensors."""

    source = "hypernet"

    def __init__(self, pieces, w1_ref, w2_ref):
        self._w1w, self._w1b, self._w2w, self._w2b = pieces
        self._stride1, self._pad1 = w1_ref.stride, w1_ref.pad
        self._stride2, self._pad2 = w2_ref.stride, w2_ref.pad

    def __call__(self, x):
        h = ad.relu(ad.conv2d(x, self._w1w, self._w1b, self._stride1, self._pad1))
        return ad.conv2d(h, self._w2w, self._w2b, self._stride2, self._pad2)


class Decoder:
    """Two refinement blocks (upsample x2, concat compressed skip, conv3x3+relu)
    from stride 16 to stride 4, then the seg head and a resize to H x W."""

    def __init__(self, rng, c_in, cfg_widths, c_dec, dtype=np.float32):
        self.c_dec = c_dec
        # skips: L4 (stride 8, widths[2] ch) and L3 (stride 4, widths[1] ch)
        self.skip_l4 = Conv2d(rng, cfg_widths[2], SKIP_CH, k=1, dtype=dtype,
                              name="dec.skip_l4")
        self.skip_l3 = Conv2d(rng, cfg_widths[1], SKIP_CH, k=1, dtype=dtype,
                              name="dec.skip_l3")
        self.block1 = Conv2d(rng, c_in + SKIP_CH, c_dec, k=3, dtype=dtype,
                             name="dec.block1")
        self.block2 = Conv2d(rng, c_dec + SKIP_CH, c_dec, k=3, dtype=dtype,
                             name="dec.block2")

    def __call__(self, x, skips, head, out_hw):
        """x: C x H/16 x W/16; skips: {"L4", "L3"} from the frame encoder."""
        l4, l3 = skips["L4"], skips["L3"]
        if l4.shape[1:] != (x.shape[1] * 2, x.shape[2] * 2):
            raise ShapeError(f"L4 skip {l4.shape} does not match input {x.shape}")
        if l3.shape[1:] != (x.shape[1] * 4, x.shape[2] * 4):
            raise ShapeError(f"L3 skip {l3.shape} does not match input {x.shape}")
        u = ad.bilinear_resize(x, l4.shape[1:])
        u = ad.relu(self.block1(ad.concat([u, self.skip_l4(l4)], axis=0)))
        u = ad.bilinear_resize(u, l3.shape[1:])
        u = ad.relu(self.block2(ad.concat([u, self.skip_l3(l3)], axis=0)))
        logits = head(u)  # 1 x H/4 x W/4
        logits = ad.bilinear_resize(logits, out_hw)
        return ad.reshape(logits, out_hw)

    def params(self):
        return (self.skip_l4.params() + self.skip_l3.params()
                + self.block1.params() + self.block2.params())
