"""Self-contained verification suites (also exposed via the CLI `check` command):
gradient checks, metric oracle comparisons, and attention invariants."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import metrics
from .encoders import EncoderConfig
from .fusion import FusionConfig, attention_logits, cross_kv, cross_q
from .gradcheck import grad_check
from .model import SketchVOSModel

GRAD_TOL = 1e-4
ATTN_TOL = 1e-6


def _small_model(design, sketch_level="L5", visual_levels=("L5",), seed=0,
                 tied=False):
    enc = EncoderConfig(widths=(4, 6, 8, 8), key_dim=4, value_dim=6, attn_dim=8,
                        decoder_dim=8)
    fus = FusionConfig(design=design, sketch_level=sketch_level,
                       visual_levels=visual_levels, attn_dim=8,
                       tied_projections=tied)
    return SketchVOSModel(enc, fus, seed=seed, dtype=np.float64)


def _rand_inputs(rng, hw=32):
    frame = rng.random((hw, hw, 3))
    ref = (rng.random((hw, hw)) > 0.85).astype(np.float64)
    gt = (rng.random((hw, hw)) > 0.5).astype(np.float64)
    return frame, ref, gt


def run_grad_suite():
    """Gradient checks through every design's bootstrap+decode chain plus the
    memory read path, in float64 on small shapes."""
    results = []
    rng = np.random.default_rng(42)
    frame, ref, gt = _rand_inputs(rng)

    configs = [
        ("cross_q_L5", "cross_q", "L5", ("L5",)),
        ("cross_kv_L5", "cross_kv", "L5", ("L5",)),
        ("cross_q_multi", "cross_q", "L5", ("L4", "L5")),
        ("cross_kv_gap", "cross_kv", "gap", ("L5",)),
        ("convweight", "convweight", "gap", ("L5",)),
    ]
    for name, design, sl, vl in configs:
        model = _small_model(design, sl, vl)

        def f(model=model):
            vis = model.encode_frame(frame)
            m0, _ = model.bootstrap_first_frame(vis, ref)
            return ad.bce_loss(m0, gt)

        report = grad_check(f, model.parameters(), rng=np.random.default_rng(7))
        worst = max(report.values())
        results.append((f"grads/bootstrap_{name}", worst < GRAD_TOL,
                        f"max rel err {worst:.2e}"))

    # memory path: concat bootstrap + one propagated frame
    from . import memory as mem
    model = _small_model("concat")
    frame2 = rng.random((32, 32, 3))

    def f_mem():
        masks, _ = mem.propagate([frame, frame2], ref, model, every_k=1)
        return ad.bce_loss(masks[1], gt)

    report = grad_check(f_mem, model.parameters(), rng=np.random.default_rng(7))
    worst = max(report.values())
    results.append(("grads/concat_memory_path", worst < GRAD_TOL,
                    f"max rel err {worst:.2e}"))
    return results


def brute_force_j(pred, gt):
    inter = sum(1 for y in range(pred.shape[0]) for x in range(pred.shape[1])
                if pred[y, x] and gt[y, x])
    union = sum(1 for y in range(pred.shape[0]) for x in range(pred.shape[1])
                if pred[y, x] or gt[y, x])
    return 1.0 if union == 0 else inter / union


def brute_force_f(pred, gt, tol_fraction=metrics.BOUNDARY_TOL_FRACTION):
    """All-pairs boundary matching oracle."""
    import math
    pb = np.argwhere(metrics.mask_boundary(pred))
    gb = np.argwhere(metrics.mask_boundary(gt))
    if len(pb) == 0 and len(gb) == 0:
        return 1.0
    if len(pb) == 0 or len(gb) == 0:
        return 0.0
    radius = math.ceil(tol_fraction * math.hypot(*pred.shape))
    d2 = ((pb[:, None, :] - gb[None, :, :]) ** 2).sum(axis=2)
    precision = (d2.min(axis=1) <= radius * radius).mean()
    recall = (d2.min(axis=0) <= radius * radius).mean()
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def run_metric_suite(n_random=100, size=16, seed=0):
    rng = np.random.default_rng(seed)
    pairs = [(rng.random((size, size)) > rng.uniform(0.3, 0.7),
              rng.random((size, size)) > rng.uniform(0.3, 0.7))
             for _ in range(n_random)]
    z = np.zeros((size, size), dtype=bool)
    o = np.ones((size, size), dtype=bool)
    px = z.copy()
    px[3, 4] = True
    pairs += [(z, z), (z, o), (o, z), (o, o), (px, z), (z, px), (px, px),
              (px, o), (o, px), (px, np.roll(px, 1, axis=0))]
    max_j_err = max(abs(metrics.region_j(p, g) - brute_force_j(p, g))
                    for p, g in pairs)
    max_f_err = max(abs(metrics.boundary_f(p, g) - brute_force_f(p, g))
                    for p, g in pairs)
    return [
        ("metrics/region_j_oracle", max_j_err == 0.0, f"max |err| {max_j_err:.2e}"),
        ("metrics/boundary_f_oracle", max_f_err < 1e-9, f"max |err| {max_f_err:.2e}"),
    ]


def run_attention_suite(n_fuzz=100, n_transpose=20, seed=0):
    from .fusion import ProjectionSet
    results = []
    rng = np.random.default_rng(seed)

    # row normalization
    worst = 0.0
    for _ in range(n_fuzz):
        c = int(rng.integers(2, 9))
        proj = ProjectionSet(np.random.default_rng(rng.integers(1 << 30)),
                             5, 4, c, dtype=np.float64)
        f = ad.Tensor(rng.standard_normal((5, 3, 4)))
        s = ad.Tensor(rng.standard_normal((4, 2, 3)))
        for fn in (cross_kv, cross_q):
            _, attn = fn(f, s, proj)
            worst = max(worst, float(np.abs(
                attn.weights.sum(axis=attn.axis) - 1).max()))
    results.append(("attention/row_normalization", worst < ATTN_TOL,
                    f"max |rowsum-1| {worst:.2e}"))

    # logit-transpose identity under tied projections
    worst = 0.0
    for _ in range(n_transpose):
        proj = ProjectionSet(np.random.default_rng(rng.integers(1 << 30)),
                             5, 4, 6, dtype=np.float64)
        proj.tie()
        f = ad.Tensor(rng.standard_normal((5, 3, 4)))
        s = ad.Tensor(rng.standard_normal((4, 2, 3)))
        a = attention_logits(f, s, proj, "cross_kv").data
        b = attention_logits(f, s, proj, "cross_q").data
        worst = max(worst, float(np.abs(a - b.T).max()))
    results.append(("attention/logit_transpose_tied", worst < ATTN_TOL,
                    f"max |delta| {worst:.2e}"))

    # GAP closed-form gate equivalence: single-key cross_kv == V_s * Q_f
    worst = 0.0
    for _ in range(20):
        proj = ProjectionSet(np.random.default_rng(rng.integers(1 << 30)),
                             5, 4, 6, dtype=np.float64)
        f = ad.Tensor(rng.standard_normal((5, 3, 4)))
        gap = ad.Tensor(rng.standard_normal((4, 1, 1)))
        fused, attn = cross_kv(f, gap, proj)
        q_f = ad.reshape(proj.visual_q(f), (6, -1)).data
        v_s = ad.reshape(proj.sketch_v(gap), (6, -1)).data
        worst = max(worst, float(np.abs(fused.data - v_s * q_f).max()))
        worst = max(worst, float(np.abs(attn.weights - 1.0).max()))
    results.append(("attention/gap_closed_form_gate", worst < ATTN_TOL,
                    f"max |delta| {worst:.2e}"))
    return results


SUITES = {
    "grads": run_grad_suite,
    "metrics": run_metric_suite,
    "attention": run_attention_suite,
}


def run(suite="all"):
    names = list(SUITES) if suite == "all" else [suite]
    results = []
    for n in names:
        results.extend(SUITES[n]())
    return results
