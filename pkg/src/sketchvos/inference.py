"""Whole-sequence inference: per-object propagation, label combination,
prediction writing, and in-memory evaluation."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import memory as mem
from . import metrics
from .dataio import DatasetIndex, SequenceRecord, save_palette_png
from .errors import ConfigError
from .refgen import REFERENCE_KINDS


def worker_count():
    try:
        return max(1, int(os.environ.get("SKETCHVOS_THREADS", "1")))
    except ValueError:
        return 1


def get_reference(seq: SequenceRecord, object_id, kind):
    if kind not in REFERENCE_KINDS:
        raise ConfigError(f"unknown reference kind {kind!r}")
    if kind == "mask":
        return seq.load_mask(0, object_id)
    return seq.load_reference(object_id, kind)


def predict_sequence(model, seq: SequenceRecord, reference_kind="sketch",
                     every_k=mem.DEFAULT_EVERY_K):
    """Propagate every object independently, then merge to T x H x W labels."""
    frames = [seq.load_frame(t) for t in range(seq.n_frames)]
    per_object = {}
    for oid in seq.object_ids:
        ref = get_reference(seq, oid, reference_kind)
        per_object[oid] = mem.propagate_masks(frames, ref, model, every_k=every_k)
    return mem.combine_objects(per_object), per_object


def write_predictions(model, index: DatasetIndex, out_root, reference_kind="sketch",
                      every_k=mem.DEFAULT_EVERY_K):
    """Write combined label maps as palette PNGs mirroring Annotations/."""
    out_root = Path(out_root)

    def run(seq):
        labels, _ = predict_sequence(model, seq, reference_kind, every_k)
        d = out_root / seq.name
        d.mkdir(parents=True, exist_ok=True)
        for t in range(seq.n_frames):
            save_palette_png(d / f"{t:05d}.png", labels[t])

    n = worker_count()
    if n > 1:
        with ThreadPoolExecutor(max_workers=n) as ex:
            list(ex.map(run, index.sequences))
    else:
        for seq in index:
            run(seq)
    return out_root


def evaluate_model(model, index: DatasetIndex, reference_kind="sketch",
                   every_k=mem.DEFAULT_EVERY_K):
    """In-memory J/F evaluation (frames 1..T-1, per-object means)."""
    per_object = []
    for seq in index:
        labels, _ = predict_sequence(model, seq, reference_kind, every_k)
        for oid in seq.object_ids:
            js, fs = [], []
            for t in range(1, seq.n_frames):
                gt = seq.load_mask(t, oid)
                js.append(metrics.region_j(labels[t] == oid, gt))
                fs.append(metrics.boundary_f(labels[t] == oid, gt))
            per_object.append((seq.name, oid, float(np.mean(js)), float(np.mean(fs))))
    j = float(np.mean([r[2] for r in per_object]))
    f = float(np.mean([r[3] for r in per_object]))
    return metrics.EvalReport(per_object=per_object, j_mean=j, f_mean=f)
