"""Sketch-frame fusion designs: input concatenation, hypernet-generated
segmentation head, and the two cross-attention variants (sketch as key/value
vs. sketch as query)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError
from .layers import Conv2d, Linear

DESIGNS = ("concat", "convweight", "cross_kv", "cross_q")
SKETCH_LEVELS = ("L4", "L5", "gap")


@dataclass
class FusionConfig:
    design: str = "cross_q"
    sketch_level: str = "L5"
    visual_levels: tuple = ("L5",)  # ("L4",), ("L5",), or ("L4", "L5") = multi-level
    attn_dim: int = 32
    tied_projections: bool = False  # test hook only

    def __post_init__(self):
        if self.design not in DESIGNS:
            raise ConfigError(f"unknown fusion design {self.design!r}")
        if self.sketch_level not in SKETCH_LEVELS:
            raise ConfigError(f"unknown sketch level {self.sketch_level!r}")
        if self.design == "convweight" and self.sketch_level != "gap":
            raise ConfigError("convweight design requires sketch_level='gap'")
        if not set(self.visual_levels) <= {"L4", "L5"}:
            raise ConfigError(f"visual levels must be within L4/L5, got {self.visual_levels}")

    @property
    def multi_level(self):
        return len(self.visual_levels) > 1


@dataclass
class AttentionMap:
    weights: np.ndarray  # query-positions x key-positions
    axis: int = 1  # normalization axis (over key positions)


HEADS_BY_DESIGN = {
    "cross_kv": ("visual_q", "sketch_k", "sketch_v"),
    # with a pooled 1x1 sketch feature the softmax over its single key position
    # is identically 1, so the key projection never receives gradient; drop it
    "cross_kv_gap": ("visual_q", "sketch_v"),
    "cross_q": ("sketch_q", "visual_k", "visual_v"),
    "all": ("visual_q", "visual_k", "visual_v", "sketch_q", "sketch_k", "sketch_v"),
}


class ProjectionSet:
    """The 1x1 Q/K/V projection convs for one feature level pair.

    Only the heads the configured design uses are created, so every parameter
    the model exposes receives gradients.
    """

    def __init__(self, rng, visual_channels, sketch_channels, attn_dim,
                 dtype=np.float32, name="proj", heads="all"):
        self.attn_dim = attn_dim
        short = {"visual_q": "vq", "visual_k": "vk", "visual_v": "vv",
                 "sketch_q": "sq", "sketch_k": "sk", "sketch_v": "sv"}
        for attr in HEADS_BY_DESIGN["all"]:
            setattr(self, attr, None)
        cin = {"v": visual_channels, "s": sketch_channels}
        for attr in HEADS_BY_DESIGN[heads]:
            tag = short[attr]
            setattr(self, attr, Conv2d(rng, cin[tag[0]], attn_dim, k=1,
                                       dtype=dtype, name=f"{name}.{tag}"))

    def tie(self):
        """Share sketch Q<->K and visual Q<->K weights (test hook)."""
        self.sketch_q.w, self.sketch_q.b = self.sketch_k.w, self.sketch_k.b
        self.visual_k.w, self.visual_k.b = self.visual_q.w, self.visual_q.b

    def params(self):
        seen, out = set(), []
        for attr in HEADS_BY_DESIGN["all"]:
            conv = getattr(self, attr)
            if conv is None:
                continue
            for p in conv.params():
                if id(p) not in seen:
                    seen.add(id(p))
                    out.append(p)
        return out


def _flat(conv, feature):
    out = conv(feature)
    return ad.reshape(out, (out.shape[0], -1))


def cross_kv(f_level, s_level, proj: ProjectionSet):
    """Sketch as key/value, frame as query. Returns (fused C x HW, AttentionMap)."""
    q_f = _flat(proj.visual_q, f_level)
    v_s = _flat(proj.sketch_v, s_level)
    if proj.sketch_k is None:
        if v_s.shape[1] != 1:
            raise ConfigError("keyless cross_kv projections require a 1-position sketch feature")
        w = ad.Tensor(np.ones((q_f.shape[1], 1), dtype=q_f.dtype))
    else:
        k_s = _flat(proj.sketch_k, s_level)
        w = ad.softmax(ad.scaled_dot_scores(q_f, k_s, proj.attn_dim), axis=1)
    fused = ad.matmul(v_s, ad.transpose(w)) * q_f
    return fused, AttentionMap(weights=w.data.copy(), axis=1)


def cross_q(f_level, s_level, proj: ProjectionSet):
    """Sketch as query, frame as key/value. Returns (fused C x MN, AttentionMap)."""
    q_s = _flat(proj.sketch_q, s_level)
    k_f = _flat(proj.visual_k, f_level)
    v_f = _flat(proj.visual_v, f_level)
    w = ad.softmax(ad.scaled_dot_scores(q_s, k_f, proj.attn_dim), axis=1)
    fused = ad.matmul(v_f, ad.transpose(w)) * q_s
    return fused, AttentionMap(weights=w.data.copy(), axis=1)


def attention_logits(f_level, s_level, proj: ProjectionSet, design):
    """Pre-softmax score matrix for either attention design (diagnostics/tests)."""
    if design == "cross_kv":
        q = _flat(proj.visual_q, f_level)
        k = _flat(proj.sketch_k, s_level)
    elif design == "cross_q":
        q = _flat(proj.sketch_q, s_level)
        k = _flat(proj.visual_k, f_level)
    else:
        raise ConfigError(f"no attention logits for design {design!r}")
    return ad.scaled_dot_scores(q, k, proj.attn_dim)


def fuse_single_level(fusion_fn, f_level, s_feat, proj, spatial_hw):
    """Run one attention design at one level and fold back to C x h x w."""
    fused, attn = fusion_fn(f_level, s_feat, proj)
    c = fused.shape[0]
    return ad.reshape(fused, (c, spatial_hw[0], spatial_hw[1])), attn


def fuse_multi_level(design, visual_levels, s_feat_per_level, projs):
    """Per-level attention at L4 and L5, upsample L5 output to L4, sum.

    visual_levels: {"L4": tensor, "L5": tensor}; s_feat_per_level maps the same
    keys to the sketch feature used at that level; projs likewise.
    """
    if design not in ("cross_kv", "cross_q"):
        raise ConfigError("multi-level fusion requires an attention design")
    fn = cross_kv if design == "cross_kv" else cross_q
    outs, attns = {}, {}
    for lvl in ("L4", "L5"):
        f = visual_levels[lvl]
        s = s_feat_per_level[lvl]
        hw = _out_spatial(design, f, s)
        outs[lvl], attns[lvl] = fuse_single_level(fn, f, s, projs[lvl], hw)
    l4_hw = outs["L4"].shape[1:]
    up = ad.bilinear_resize(outs["L5"], l4_hw)
    return outs["L4"] + up, attns


def _out_spatial(design, f_level, s_level):
    """Spatial shape of the fused map: frame positions for cross_kv, sketch
    positions for cross_q (GAP collapses to 1x1)."""
    src = f_level if design == "cross_kv" else s_level
    return src.shape[1], src.shape[2]


class HyperNet:
    """Two-layer MLP mapping a pooled sketch embedding to segmentation-head weights."""

    HIDDEN = 128

    def __init__(self, rng, embed_dim, target_param_count, dtype=np.float32):
        self.target_param_count = target_param_count
        self.fc1 = Linear(rng, embed_dim, self.HIDDEN, dtype=dtype, name="hyper.fc1")
        self.fc2 = Linear(rng, self.HIDDEN, target_param_count, dtype=dtype,
                          name="hyper.fc2")

    def __call__(self, gap):
        """gap: C x 1 x 1 tensor -> flat parameter vector (target_param_count,)."""
        x = ad.reshape(gap, (-1, 1))
        h = ad.relu(self.fc1(x))
        out = self.fc2(h)
        return ad.reshape(out, (-1,))

    def params(self):
        return self.fc1.params() + self.fc2.params()
