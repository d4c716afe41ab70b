import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sketchvos import autodiff as ad
from sketchvos import memory as mem
from sketchvos.errors import ConfigError, ShapeError, StateError


def bank_with(keys, values, mode="l2"):
    b = mem.MemoryBank(affinity_mode=mode)
    b.insert(ad.Tensor(np.asarray(keys, dtype=np.float64)),
             ad.Tensor(np.asarray(values, dtype=np.float64)), 0)
    return b


def test_single_position_bank_gives_weight_one():
    b = bank_with([[1.0], [2.0]], [[3.0]])
    w = mem.affinity(ad.Tensor(np.random.default_rng(0).standard_normal((2, 5))), b)
    np.testing.assert_allclose(w.data, 1.0)


def test_identical_keys_give_uniform_weights():
    k = np.tile(np.array([[1.0], [-2.0]]), (1, 4))
    b = bank_with(k, np.zeros((3, 4)))
    w = mem.affinity(ad.Tensor(np.array([[0.3], [0.7]])), b)
    np.testing.assert_allclose(w.data, 0.25)


def test_two_key_closed_form_weight():
    # query equals the first key; keys at distance d: the first key's weight is
    # softmax over (0, -d^2), i.e. 1 / (1 + exp(-d^2))
    for d in (0.5, 1.0, 2.0):
        keys = np.array([[0.0, d]])
        b = bank_with(keys, np.zeros((1, 2)))
        w = mem.affinity(ad.Tensor(np.array([[0.0]])), b)
        want = 1.0 / (1.0 + math.exp(-d * d))
        np.testing.assert_allclose(w.data[0, 0], want, atol=1e-6)


def test_affinity_columns_normalize_fuzz():
    rng = np.random.default_rng(1)
    for _ in range(100):
        c = int(rng.integers(1, 5))
        r = int(rng.integers(1, 7))
        p = int(rng.integers(1, 7))
        mode = "l2" if rng.random() < 0.5 else "dot"
        b = bank_with(rng.standard_normal((c, r)), rng.standard_normal((2, r)),
                      mode)
        w = mem.affinity(ad.Tensor(rng.standard_normal((c, p))), b)
        np.testing.assert_allclose(w.data.sum(axis=0), 1.0, atol=1e-6)


def test_read_matches_loop_oracle():
    rng = np.random.default_rng(2)
    vals = rng.standard_normal((3, 4))
    b = bank_with(rng.standard_normal((2, 4)), vals)
    w = ad.Tensor(rng.random((4, 5)))
    got = mem.read(w, b).data
    want = np.zeros((3, 5))
    for c in range(3):
        for p in range(5):
            for r in range(4):
                want[c, p] += vals[c, r] * w.data[r, p]
    np.testing.assert_allclose(got, want, atol=1e-6)


def test_read_single_entry_weight_one():
    b = bank_with([[1.0]], [[2.0], [5.0]])
    out = mem.read(ad.Tensor(np.ones((1, 3))), b)
    np.testing.assert_allclose(out.data, [[2.0] * 3, [5.0] * 3])


def test_insertion_policy_counts():
    # entries after processing frames 0..T-1: frame 0 plus every multiple of k
    for t_total, k in [(1, 1), (5, 5), (6, 5), (20, 5), (20, 1)]:
        count = sum(1 for t in range(t_total) if mem.should_insert(t, k))
        assert count == 1 + (t_total - 1) // k


def test_memory_entry_indices_20_frames_every_5():
    inserted = [t for t in range(20) if mem.should_insert(t, 5)]
    assert inserted == [0, 5, 10, 15]


def test_duplicate_insert_raises():
    b = bank_with([[1.0]], [[1.0]])
    with pytest.raises(StateError):
        b.insert(ad.Tensor(np.ones((1, 1))), ad.Tensor(np.ones((1, 1))), 0)


def test_empty_bank_raises():
    with pytest.raises(StateError):
        mem.MemoryBank().keys()


def test_mismatched_key_value_positions():
    b = mem.MemoryBank()
    with pytest.raises(ShapeError):
        b.insert(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((2, 4))), 0)


def test_unknown_affinity_mode():
    with pytest.raises(ConfigError):
        mem.MemoryBank(affinity_mode="cosine")


def test_key_channel_mismatch():
    b = bank_with(np.ones((2, 3)), np.ones((2, 3)))
    with pytest.raises(ShapeError):
        mem.affinity(ad.Tensor(np.ones((3, 2))), b)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 8))
def test_entry_count_formula(t_total, k):
    count = sum(1 for t in range(t_total) if mem.should_insert(t, k))
    assert count == 1 + (t_total - 1) // k


def test_combine_objects_preserves_disjoint_confident_objects():
    a = np.zeros((1, 4, 4))
    b = np.zeros((1, 4, 4))
    a[0, :2, :] = 0.9
    b[0, 2:, :] = 0.8
    label = mem.combine_objects({1: a, 2: b})
    assert (label[0, :2, :] == 1).all()
    assert (label[0, 2:, :] == 2).all()


def test_combine_objects_background_below_half():
    a = np.full((1, 2, 2), 0.3)
    label = mem.combine_objects({1: a})
    assert (label == 0).all()


def test_combine_objects_overlap_goes_to_argmax():
    a = np.full((1, 2, 2), 0.7)
    b = np.full((1, 2, 2), 0.9)
    label = mem.combine_objects({1: a, 2: b})
    assert (label == 2).all()
