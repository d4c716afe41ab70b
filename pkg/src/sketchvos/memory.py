"""Space-time memory: key/value storage, affinity readout, insertion policy,
and full per-object propagation through a video."""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ShapeError, StateError

DEFAULT_EVERY_K = 5


class MemoryBank:
    """Concatenated key/value features from selected frames.

    Entries are appended in frame order; nothing is ever evicted, so the first
    entry is permanent by construction. A bank mutates and must stay confined
    to one propagation context.
    """

    def __init__(self, affinity_mode="l2"):
        if affinity_mode not in ("l2", "dot"):
            raise ConfigError(f"unknown affinity mode {affinity_mode!r}")
        self.affinity_mode = affinity_mode
        self.entries = []  # (frame_index, key C_k x P, value C_v x P)

    def __len__(self):
        return len(self.entries)

    @property
    def frame_indices(self):
        return [fi for fi, _, _ in self.entries]

    def insert(self, key, value, frame_index):
        if key.shape[1] != value.shape[1]:
            raise ShapeError(f"key/value position counts differ: {key.shape} vs {value.shape}")
        if frame_index in self.frame_indices:
            raise StateError(f"frame {frame_index} already in memory")
        self.entries.append((frame_index, key, value))

    def keys(self):
        if not self.entries:
            raise StateError("memory bank is empty")
        ks = [k for _, k, _ in self.entries]
        return ks[0] if len(ks) == 1 else ad.concat(ks, axis=1)

    def values(self):
        vs = [v for _, _, v in self.entries]
        return vs[0] if len(vs) == 1 else ad.concat(vs, axis=1)


def should_insert(frame_index, every_k=DEFAULT_EVERY_K):
    return frame_index == 0 or frame_index % every_k == 0


def affinity(query_key, bank: MemoryBank):
    """Softmax-normalized similarity between memory keys and query positions.

    Returns an R x P tensor (R memory positions, P query positions) whose
    columns sum to 1. Default similarity is negative squared Euclidean
    distance; "dot" falls back to plain inner products.
    """
    mem = bank.keys()
    if mem.shape[0] != query_key.shape[0]:
        raise ShapeError(f"key channel mismatch: {mem.shape} vs {query_key.shape}")
    prod = ad.matmul(ad.transpose(mem), query_key)  # R x P
    if bank.affinity_mode == "dot":
        scores = prod
    else:
        k_sq = ad.reshape(ad.sum_(mem * mem, axis=0), (-1, 1))
        q_sq = ad.reshape(ad.sum_(query_key * query_key, axis=0), (1, -1))
        scores = prod * 2.0 - k_sq - q_sq
    return ad.softmax(scores, axis=0)


def read(weights, bank: MemoryBank):
    """Weighted aggregation of memory values: C_v x P readout."""
    vals = bank.values()
    if vals.shape[1] != weights.shape[0]:
        raise ShapeError(f"value/weight mismatch: {vals.shape} vs {weights.shape}")
    return ad.matmul(vals, weights)


def propagate(frames, reference, model, every_k=DEFAULT_EVERY_K):
    """Segment one object through a video given its first-frame reference.

    frames: list of H x W x 3 float arrays in [0,1]; reference: the aligned
    binary reference raster. Returns (list of H x W soft-mask tensors, bank).
    """
    design = model.fusion_cfg.design
    bank = MemoryBank(affinity_mode=model.affinity_mode)
    masks = []

    vis0 = model.encode_frame(frames[0])
    if design == "concat":
        # the sketch-value pair seeds memory directly; frame 0 is then
        # predicted by querying that bank like any other frame
        value0 = model.value_enc(model.as_tensor_frame(frames[0]), reference)
        bank.insert(model.flat_key(vis0), model.flatten_value(value0), 0)
        m0 = model.predict_from_memory(vis0, bank)
    else:
        m0, _ = model.bootstrap_first_frame(vis0, reference)
        value0 = model.value_enc(model.as_tensor_frame(frames[0]), m0)
        bank.insert(model.flat_key(vis0), model.flatten_value(value0), 0)
    masks.append(m0)

    for t in range(1, len(frames)):
        vis = model.encode_frame(frames[t])
        m = model.predict_from_memory(vis, bank)
        masks.append(m)
        if should_insert(t, every_k):
            value = model.value_enc(model.as_tensor_frame(frames[t]), m)
            bank.insert(model.flat_key(vis), model.flatten_value(value), t)
    return masks, bank


def propagate_masks(frames, reference, model, every_k=DEFAULT_EVERY_K):
    """propagate() with the soft masks stacked into a T x H x W float array."""
    masks, _ = propagate(frames, reference, model, every_k=every_k)
    return np.stack([m.data.astype(np.float32) for m in masks])


def combine_objects(per_object_probs):
    """Merge per-object soft masks into one label map per frame.

    per_object_probs: {object_id: T x H x W probabilities}. A pixel is
    background when every object's probability is below 0.5, else it takes the
    argmax object id.
    """
    ids = sorted(per_object_probs)
    stack = np.stack([per_object_probs[i] for i in ids])  # O x T x H x W
    best = stack.argmax(axis=0)
    label = np.asarray(ids, dtype=np.int32)[best]
    label[stack.max(axis=0) < 0.5] = 0
    return label
