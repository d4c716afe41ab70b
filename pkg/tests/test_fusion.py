import numpy as np
import pytest

from sketchvos import autodiff as ad
from sketchvos.decoder import SegHead
from sketchvos.errors import ConfigError
from sketchvos.fusion import (AttentionMap, FusionConfig, HyperNet,
                              ProjectionSet, attention_logits, cross_kv,
                              cross_q, fuse_multi_level, fuse_single_level)


def proj(seed=0, vc=5, sc=4, c=6, heads="all"):
    return ProjectionSet(np.random.default_rng(seed), vc, sc, c,
                         dtype=np.float64, heads=heads)


def feats(seed=1, vc=5, sc=4, fhw=(3, 4), shw=(2, 3)):
    g = np.random.default_rng(seed)
    f = ad.Tensor(g.standard_normal((vc,) + fhw))
    s = ad.Tensor(g.standard_normal((sc,) + shw))
    return f, s


def test_config_validation():
    with pytest.raises(ConfigError):
        FusionConfig(design="nope")
    with pytest.raises(ConfigError):
        FusionConfig(design="convweight", sketch_level="L5")
    with pytest.raises(ConfigError):
        FusionConfig(visual_levels=("L3",))
    assert FusionConfig(visual_levels=("L4", "L5")).multi_level


def test_cross_kv_shapes():
    f, s = feats(fhw=(4, 4), shw=(4, 4))
    fused, attn = cross_kv(f, s, proj())
    assert attn.weights.shape == (16, 16)
    assert fused.shape == (6, 16)


def test_cross_q_shapes():
    f, s = feats(fhw=(4, 4), shw=(4, 4))
    fused, attn = cross_q(f, s, proj())
    assert attn.weights.shape == (16, 16)
    assert fused.shape == (6, 16)


def test_cross_kv_identical_keys_mean_value():
    # every sketch key identical -> uniform attention -> column-mean of V_s
    p = proj()
    f, s = feats()
    s_const = ad.Tensor(np.broadcast_to(s.data[:, :1, :1], s.shape).copy())
    fused, attn = cross_kv(f, s_const, p)
    np.testing.assert_allclose(attn.weights, 1.0 / attn.weights.shape[1])
    from sketchvos.fusion import _flat
    v_s = _flat(p.sketch_v, s_const).data
    q_f = _flat(p.visual_q, f).data
    np.testing.assert_allclose(fused.data, v_s.mean(axis=1, keepdims=True) * q_f,
                               atol=1e-10)


def test_cross_kv_gap_reduces_to_gate():
    p = proj()
    f, _ = feats()
    gap = ad.Tensor(np.random.default_rng(9).standard_normal((4, 1, 1)))
    fused, attn = cross_kv(f, gap, p)
    from sketchvos.fusion import _flat
    np.testing.assert_allclose(attn.weights, 1.0)
    np.testing.assert_allclose(
        fused.data, _flat(p.sketch_v, gap).data * _flat(p.visual_q, f).data,
        atol=1e-12)


def test_cross_q_single_frame_position_reduces_to_gate():
    p = proj()
    _, s = feats()
    f1 = ad.Tensor(np.random.default_rng(10).standard_normal((5, 1, 1)))
    fused, attn = cross_q(f1, s, p)
    from sketchvos.fusion import _flat
    np.testing.assert_allclose(attn.weights, 1.0)
    np.testing.assert_allclose(
        fused.data, _flat(p.visual_v, f1).data * _flat(p.sketch_q, s).data,
        atol=1e-12)


def test_logit_transpose_under_tied_projections():
    p = proj(seed=3)
    p.tie()
    f, s = feats(seed=4)
    a = attention_logits(f, s, p, "cross_kv").data
    b = attention_logits(f, s, p, "cross_q").data
    np.testing.assert_allclose(a, b.T, atol=1e-6)


def test_sketch_permutation_leaves_cross_kv_output_unchanged():
    p = proj(seed=5)
    f, s = feats(seed=6, shw=(2, 3))
    fused0, attn0 = cross_kv(f, s, p)
    perm = np.random.default_rng(7).permutation(6)
    s_perm = ad.Tensor(s.data.reshape(4, 6)[:, perm].reshape(4, 2, 3).copy())
    fused1, attn1 = cross_kv(f, s_perm, p)
    np.testing.assert_allclose(attn1.weights, attn0.weights[:, perm], atol=1e-12)
    np.testing.assert_allclose(fused1.data, fused0.data, atol=1e-10)


def test_keyless_projection_rejects_spatial_sketch():
    p = proj(heads="cross_kv_gap")
    f, s = feats()
    with pytest.raises(ConfigError):
        cross_kv(f, s, p)


def test_head_selection_creates_only_needed_convs():
    p = proj(heads="cross_q")
    assert p.sketch_q is not None and p.visual_k is not None
    assert p.visual_q is None and p.sketch_k is None and p.sketch_v is None


def test_multi_level_is_sum_of_per_level_outputs():
    g = np.random.default_rng(8)
    vis = {"L4": ad.Tensor(g.standard_normal((5, 4, 4))),
           "L5": ad.Tensor(g.standard_normal((5, 2, 2)))}
    sk = {"L4": ad.Tensor(g.standard_normal((4, 4, 4))),
          "L5": ad.Tensor(g.standard_normal((4, 2, 2)))}
    projs = {"L4": proj(seed=11), "L5": proj(seed=12)}
    out, _ = fuse_multi_level("cross_q", vis, sk, projs)
    want = {}
    for lvl in ("L4", "L5"):
        want[lvl], _ = fuse_single_level(cross_q, vis[lvl], sk[lvl], projs[lvl],
                                         sk[lvl].shape[1:])
    up = ad.bilinear_resize(want["L5"], (4, 4))
    np.testing.assert_allclose(out.data, want["L4"].data + up.data, atol=1e-6)
    assert out.shape[1:] == (4, 4)


def test_multi_level_rejects_non_attention_designs():
    with pytest.raises(ConfigError):
        fuse_multi_level("concat", {}, {}, {})


def test_hypernet_param_count_matches_head():
    g = np.random.default_rng(13)
    head = SegHead(g, 8, dtype=np.float64)
    hyper = HyperNet(g, 6, head.param_count(), dtype=np.float64)
    flat = hyper(ad.Tensor(g.standard_normal((6, 1, 1))))
    assert flat.shape == (head.param_count(),)


def test_hypernet_install_equals_manual_copy():
    g = np.random.default_rng(14)
    head = SegHead(g, 8, dtype=np.float64)
    hyper = HyperNet(g, 6, head.param_count(), dtype=np.float64)
    flat = hyper(ad.Tensor(g.standard_normal((6, 1, 1))))
    installed = head.install_flat(flat)
    x = ad.Tensor(g.standard_normal((8, 5, 5)))
    got = installed(x).data

    # copy the same values into a plain head and compare logits
    manual = SegHead(g, 8, dtype=np.float64)
    v = flat.data
    n1 = manual.w1.w.data.size
    manual.w1.w.data = v[:n1].reshape(manual.w1.w.shape).copy()
    o = n1
    n = manual.w1.b.data.size
    manual.w1.b.data = v[o:o + n].copy()
    o += n
    n = manual.w2.w.data.size
    manual.w2.w.data = v[o:o + n].reshape(manual.w2.w.shape).copy()
    o += n
    manual.w2.b.data = v[o:].copy()
    np.testing.assert_allclose(got, manual(x).data, atol=1e-6)


def test_hypernet_distinct_embeddings_distinct_heads():
    g = np.random.default_rng(15)
    hyper = HyperNet(g, 6, 50, dtype=np.float64)
    a = hyper(ad.Tensor(g.standard_normal((6, 1, 1)))).data
    b = hyper(ad.Tensor(g.standard_normal((6, 1, 1)))).data
    assert np.linalg.norm(a - b) > 0


def test_attention_map_axis_defaults_to_keys():
    assert AttentionMap(weights=np.ones((2, 2)) / 2).axis == 1
