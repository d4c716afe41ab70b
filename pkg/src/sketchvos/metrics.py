"""Region similarity J, boundary accuracy F, and dataset-level aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .dataio import load_dataset, load_palette_png
from .errors import IntegrityError, ShapeError

BOUNDARY_TOL_FRACTION = 0.008


def region_j(pred, gt):
    """Intersection over union; both masks empty counts as a perfect 1.0."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    union = np.logical_or(pred, gt).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(pred, gt).sum() / union)


def mask_boundary(mask):
    """1-px boundary: foreground pixels with a 4-neighbor background pixel
    (image border counts as background)."""
    m = np.asarray(mask) > 0
    padded = np.pad(m, 1)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~interior


def boundary_f(pred, gt, tol_fraction=BOUNDARY_TOL_FRACTION):
    """Boundary precision/recall F-measure within a pixel tolerance band."""
    pred = np.asarray(pred) > 0
    gt = np.asarray(gt) > 0
    if pred.shape != gt.shape:
        raise ShapeError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    pb = mask_boundary(pred)
    gb = mask_boundary(gt)
    n_pb, n_gb = pb.sum(), gb.sum()
    if n_pb == 0 and n_gb == 0:
        return 1.0
    if n_pb == 0 or n_gb == 0:
        return 0.0
    radius = math.ceil(tol_fraction * math.hypot(*pred.shape))
    # Euclidean distance-to-boundary thresholding == disk dilation matching
    gt_dist = ndimage.distance_transform_edt(~gb)
    pred_dist = ndimage.distance_transform_edt(~pb)
    precision = (gt_dist[pb] <= radius).mean()
    recall = (pred_dist[gb] <= radius).mean()
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


@dataclass
class EvalReport:
    per_object: list  # (sequence, object_id, j_mean, f_mean)
    j_mean: float
    f_mean: float

    @property
    def jf_mean(self):
        return (self.j_mean + self.f_mean) / 2.0

    def write_csv(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "global.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["J-Mean", "F-Mean", "J&F-Mean"])
            w.writerow([f"{self.j_mean:.6f}", f"{self.f_mean:.6f}",
                        f"{self.jf_mean:.6f}"])
        with open(out_dir / "per_sequence.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["seq", "obj", "J-Mean", "F-Mean"])
            for seq, obj, j, fm in self.per_object:
                w.writerow([seq, obj, f"{j:.6f}", f"{fm:.6f}"])


def evaluate_dataset(predictions_root, gt_root, split="val") -> EvalReport:
    """DAVIS-style evaluation: per (sequence, object) J/F means over frames
    1..T-1 (the given reference frame is excluded), then global means over
    (sequence, object) pairs."""
    predictions_root = Path(predictions_root)
    index = load_dataset(gt_root, split=split)
    per_object = []
    for seq in index:
        pred_labels = []
        for t in range(1, seq.n_frames):
            p = predictions_root / seq.name / f"{t:05d}.png"
            if not p.exists():
                raise IntegrityError(f"missing prediction frame {p}")
            pred_labels.append(load_palette_png(p))
        gt_labels = [seq.load_label(t) for t in range(1, seq.n_frames)]
        for oid in seq.object_ids:
            js, fs = [], []
            for pl, gl in zip(pred_labels, gt_labels):
                js.append(region_j(pl == oid, gl == oid))
                fs.append(boundary_f(pl == oid, gl == oid))
            per_object.append((seq.name, oid, float(np.mean(js)), float(np.mean(fs))))
    if not per_object:
        raise IntegrityError("nothing to evaluate")
    j_mean = float(np.mean([j for _, _, j, _ in per_object]))
    f_mean = float(np.mean([f for _, _, _, f in per_object]))
    return EvalReport(per_object=per_object, j_mean=j_mean, f_mean=f_mean)
