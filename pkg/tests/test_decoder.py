import numpy as np
import pytest

from sketchvos import autodiff as ad
from sketchvos.decoder import HEAD_HIDDEN, Decoder, SegHead, _slice1d
from sketchvos.errors import ShapeError

WIDTHS = (4, 6, 8, 8)


def make_decoder(dtype=np.float64, seed=0):
    g = np.random.default_rng(seed)
    dec = Decoder(g, 8, WIDTHS, 8, dtype=dtype)
    head = SegHead(g, 8, dtype=dtype)
    return dec, head


def skips_for(hw, dtype=np.float64, seed=1):
    g = np.random.default_rng(seed)
    return {"L4": ad.Tensor(g.standard_normal((WIDTHS[2], hw // 8, hw // 8)).astype(dtype)),
            "L3": ad.Tensor(g.standard_normal((WIDTHS[1], hw // 4, hw // 4)).astype(dtype))}


@pytest.mark.parametrize("hw", [32, 48, 64, 128])
def test_resolution_contract(hw):
    dec, head = make_decoder()
    x = ad.Tensor(np.random.default_rng(2).standard_normal((8, hw // 16, hw // 16)))
    logits = dec(x, skips_for(hw), head, (hw, hw))
    assert logits.shape == (hw, hw)
    assert np.isfinite(logits.data).all()


def test_logits_finite_for_bounded_inputs():
    dec, head = make_decoder()
    g = np.random.default_rng(3)
    x = ad.Tensor(g.uniform(-10, 10, (8, 2, 2)))
    logits = dec(x, skips_for(32, seed=4), head, (32, 32))
    assert np.isfinite(logits.data).all()


def test_zero_everything_gives_half_mask():
    dec, head = make_decoder()
    for p in dec.params() + head.params():
        p.data[...] = 0.0
    x = ad.Tensor(np.zeros((8, 2, 2)))
    skips = {"L4": ad.Tensor(np.zeros((WIDTHS[2], 4, 4))),
             "L3": ad.Tensor(np.zeros((WIDTHS[1], 8, 8)))}
    logits = dec(x, skips, head, (32, 32))
    np.testing.assert_allclose(logits.data, 0.0)
    np.testing.assert_allclose(ad.sigmoid(logits).data, 0.5)


def test_skip_shape_mismatch_raises():
    dec, head = make_decoder()
    x = ad.Tensor(np.zeros((8, 2, 2)))
    bad = {"L4": ad.Tensor(np.zeros((WIDTHS[2], 3, 3))),
           "L3": ad.Tensor(np.zeros((WIDTHS[1], 8, 8)))}
    with pytest.raises(ShapeError):
        dec(x, bad, head, (32, 32))


def test_seg_head_param_count():
    head = SegHead(np.random.default_rng(0), 8, dtype=np.float64)
    want = 8 * HEAD_HIDDEN * 9 + HEAD_HIDDEN + HEAD_HIDDEN + 1
    assert head.param_count() == want


def test_installed_head_matches_own_weights():
    # installing the head's own flattened weights reproduces its logits
    head = SegHead(np.random.default_rng(5), 8, dtype=np.float64)
    flat = ad.Tensor(np.concatenate([p.data.ravel() for p in head.params()]))
    installed = head.install_flat(flat)
    x = ad.Tensor(np.random.default_rng(6).standard_normal((8, 5, 5)))
    np.testing.assert_allclose(installed(x).data, head(x).data, atol=1e-6)


def test_install_flat_wrong_size():
    head = SegHead(np.random.default_rng(7), 8, dtype=np.float64)
    with pytest.raises(ShapeError):
        head.install_flat(ad.Tensor(np.zeros(3)))


def test_slice1d_backward_scatter():
    t = ad.Tensor(np.arange(6.0), requires_grad=True)
    y = ad.sum_(_slice1d(t, 2, 5))
    y.backward()
    np.testing.assert_allclose(t.grad, [0, 0, 1, 1, 1, 0])


def test_decode_path_gradcheck():
    from sketchvos.gradcheck import grad_check

    dec, head = make_decoder()
    x_np = np.random.default_rng(8).standard_normal((8, 2, 2))
    skips = skips_for(32, seed=9)
    gt = (np.random.default_rng(10).random((32, 32)) > 0.5).astype(np.float64)

    def f():
        logits = dec(ad.Tensor(x_np), skips, head, (32, 32))
        return ad.bce_loss(ad.sigmoid(logits), gt)

    report = grad_check(f, dec.params() + head.params(),
                        rng=np.random.default_rng(11))
    assert max(report.values()) < 1e-4, report
