"""Full segmentation model: encoders + fusion design + memory interface + decoder."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import memory as mem
from .decoder import Decoder, SegHead
from .encoders import EncoderConfig, FrameEncoder, SketchEncoder, ValueEncoder
from .errors import ConfigError
from .fusion import (FusionConfig, HyperNet, ProjectionSet, cross_kv, cross_q,
                     fuse_multi_level, fuse_single_level, _out_spatial)
from .layers import Conv2d

LEVEL_WIDTH_INDEX = {"L4": 2, "L5": 3}


class SketchVOSModel:
    def __init__(self, enc_cfg: EncoderConfig, fusion_cfg: FusionConfig,
                 seed=0, dtype=np.float32, affinity_mode="l2"):
        if fusion_cfg.attn_dim != enc_cfg.attn_dim:
            fusion_cfg.attn_dim = enc_cfg.attn_dim
        self.enc_cfg = enc_cfg
        self.fusion_cfg = fusion_cfg
        self.dtype = dtype
        self.affinity_mode = affinity_mode
        rng = np.random.default_rng(seed)
        design = fusion_cfg.design

        self.frame_enc = FrameEncoder(rng, enc_cfg, dtype=dtype)
        self.value_enc = ValueEncoder(rng, enc_cfg, dtype=dtype)
        self.readout_adapter = Conv2d(rng, enc_cfg.value_dim, enc_cfg.decoder_dim,
                                      k=3, dtype=dtype, name="readout_adapter")
        self.decoder = Decoder(rng, enc_cfg.decoder_dim, enc_cfg.widths,
                               enc_cfg.decoder_dim, dtype=dtype)
        self.seg_head = SegHead(rng, enc_cfg.decoder_dim, dtype=dtype)

        self.sketch_enc = None
        self.projections = {}
        self.fusion_adapter = None
        self.visual_adapter = None
        self.hypernet = None

        if design != "concat":
            self.sketch_enc = SketchEncoder(rng, enc_cfg, dtype=dtype)
        if design in ("cross_kv", "cross_q"):
            s_ch = enc_cfg.widths[3] if fusion_cfg.sketch_level in ("L5", "gap") \
                else enc_cfg.widths[2]
            for lvl in fusion_cfg.visual_levels:
                v_ch = enc_cfg.widths[LEVEL_WIDTH_INDEX[lvl]]
                if fusion_cfg.tied_projections:
                    heads = "all"
                elif design == "cross_kv" and fusion_cfg.sketch_level == "gap":
                    heads = "cross_kv_gap"
                else:
                    heads = design
                self.projections[lvl] = ProjectionSet(
                    rng, v_ch, s_ch, fusion_cfg.attn_dim, dtype=dtype,
                    name=f"proj_{lvl}", heads=heads)
                if fusion_cfg.tied_projections:
                    self.projections[lvl].tie()
            self.fusion_adapter = Conv2d(rng, fusion_cfg.attn_dim,
                                         enc_cfg.decoder_dim, k=3, dtype=dtype,
                                         name="fusion_adapter")
        elif design == "convweight":
            self.visual_adapter = Conv2d(rng, enc_cfg.widths[3],
                                         enc_cfg.decoder_dim, k=3, dtype=dtype,
                                         name="visual_adapter")
            self.hypernet = HyperNet(rng, enc_cfg.widths[3],
                                     self.seg_head.param_count(), dtype=dtype)
        self._active_head = self.seg_head  # convweight replaces this per sequence

    # -- plumbing ------------------------------------------------------------

    def as_tensor_frame(self, frame):
        """H x W x 3 array in [0,1] -> 3 x H x W tensor."""
        if isinstance(frame, ad.Tensor):
            return frame
        return ad.Tensor(np.ascontiguousarray(
            np.transpose(np.asarray(frame, dtype=self.dtype), (2, 0, 1))))

    def encode_frame(self, frame):
        return self.frame_enc(self.as_tensor_frame(frame))

    def flat_key(self, vis):
        k = vis.key
        return ad.reshape(k, (k.shape[0], -1))

    def flatten_value(self, value):
        return ad.reshape(value, (value.shape[0], -1))

    def sketch_feature(self, sketch_feats, level=None):
        level = level or self.fusion_cfg.sketch_level
        return sketch_feats.gap if level == "gap" else sketch_feats.levels[level]

    # -- forward pieces ------------------------------------------------------

    def bootstrap_first_frame(self, vis, reference):
        """First-frame prediction for designs other than concat.

        reference: aligned binary raster (H x W). Returns (soft mask tensor,
        attention info or None).
        """
        design = self.fusion_cfg.design
        if design == "concat":
            raise ConfigError("concat design has no bootstrap prediction step")
        sk = self.sketch_enc(np.asarray(reference, dtype=self.dtype))
        out_hw = (vis.levels["L3"].shape[1] * 4, vis.levels["L3"].shape[2] * 4)
        skips = {"L4": vis.levels["L4"], "L3": vis.levels["L3"]}

        if design == "convweight":
            head = self.seg_head.install_flat(self.hypernet(sk.gap))
            self._active_head = head
            x = ad.relu(self.visual_adapter(vis.levels["L5"]))
            logits = self.decoder(x, skips, head, out_hw)
            return ad.sigmoid(logits), None

        s_feat = self.sketch_feature(sk)
        attn = None
        if self.fusion_cfg.multi_level:
            fused, attn = fuse_multi_level(
                design,
                {lvl: vis.levels[lvl] for lvl in ("L4", "L5")},
                {lvl: s_feat for lvl in ("L4", "L5")},
                self.projections)
        else:
            lvl = self.fusion_cfg.visual_levels[0]
            fn = cross_kv if design == "cross_kv" else cross_q
            hw = _out_spatial(design, vis.levels[lvl], s_feat)
            fused, attn = fuse_single_level(fn, vis.levels[lvl], s_feat,
                                            self.projections[lvl], hw)
        target_hw = vis.levels["L5"].shape[1:]
        if fused.shape[1:] != target_hw:
            fused = ad.bilinear_resize(fused, target_hw)
        x = ad.relu(self.fusion_adapter(fused))
        logits = self.decoder(x, skips, self._head_for_decode(), out_hw)
        return ad.sigmoid(logits), attn

    def _head_for_decode(self):
        return self._active_head if self.fusion_cfg.design == "convweight" \
            else self.seg_head

    def predict_from_memory(self, vis, bank):
        """Query the memory bank with this frame's key and decode a soft mask."""
        q = self.flat_key(vis)
        w = mem.affinity(q, bank)
        readout = mem.read(w, bank)
        h16 = vis.levels["L5"].shape[1:]
        x = ad.relu(self.readout_adapter(
            ad.reshape(readout, (readout.shape[0],) + h16)))
        out_hw = (vis.levels["L3"].shape[1] * 4, vis.levels["L3"].shape[2] * 4)
        skips = {"L4": vis.levels["L4"], "L3": vis.levels["L3"]}
        logits = self.decoder(x, skips, self._head_for_decode(), out_hw)
        return ad.sigmoid(logits)

    # -- parameters / checkpointing ------------------------------------------

    def parameters(self):
        """All trainable parameters for the configured design."""
        parts = [self.frame_enc.params(), self.value_enc.params(),
                 self.readout_adapter.params(), self.decoder.params()]
        design = self.fusion_cfg.design
        if design != "convweight":
            parts.append(self.seg_head.params())
        if self.sketch_enc is not None:
            sk = self.sketch_enc.params()
            if design in ("cross_kv", "cross_q") and self.fusion_cfg.sketch_level == "L4":
                # the deepest sketch stage feeds only L5/gap and is unused here
                sk = [p for p in sk if not p.name.startswith("sketch.s3")]
            parts.append(sk)
        for lvl in sorted(self.projections):
            parts.append(self.projections[lvl].params())
        for extra in (self.fusion_adapter, self.visual_adapter):
            if extra is not None:
                parts.append(extra.params())
        if self.hypernet is not None:
            parts.append(self.hypernet.params())
        out = [p for chunk in parts for p in chunk]
        assert len({p.name for p in out}) == len(out), "duplicate parameter names"
        return out

    def state_dict(self):
        state = {}
        for p in self.parameters():
            state[p.name] = p.data.copy()
            state[f"{p.name}.adam_m"] = p.m.copy()
            state[f"{p.name}.adam_v"] = p.v.copy()
            state[f"{p.name}.adam_t"] = np.asarray(p.step_count)
        return state

    def load_state_dict(self, state):
        for p in self.parameters():
            p.data = state[p.name].astype(self.dtype).copy()
            p.m = state[f"{p.name}.adam_m"].astype(self.dtype).copy()
            p.v = state[f"{p.name}.adam_v"].astype(self.dtype).copy()
            p.step_count = int(state[f"{p.name}.adam_t"])
            p.grad = None
