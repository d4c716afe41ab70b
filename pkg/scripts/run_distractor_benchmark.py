#!/usr/bin/env python3
"""Train one model on the synthetic distractor benchmark and report the loss
curve plus untrained-vs-trained validation J&F.

The dataset (300 train / 30 val sequences, 64x64, two veiled look-alike
objects) is generated on first use and reused afterwards. The veil is what
gives richer references their edge: every object is painted as a featureless
disk covering its circumradius while ground truth keeps the true shape, so the
image reveals position and size but not which shape is underneath — a point
mark adds nothing, while a sketch of the outline identifies the shape.
"""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from sketchvos import dataio, inference, refgen, train
from sketchvos.encoders import EncoderConfig
from sketchvos.fusion import FusionConfig

TRAIN_SEED = 100
VAL_SEED = 200


def ensure_benchmark(root, n_train=300, n_val=30, frames=12, size=64):
    root = Path(root)
    for split, n, seed in (("train", n_train, TRAIN_SEED), ("val", n_val, VAL_SEED)):
        d = root / split
        if (d / "meta.json").exists():
            continue
        cfg = dataio.SynthConfig(n_sequences=n, frames_per_seq=frames,
                                 canvas=(size, size), n_objects=2,
                                 distractor_mode=True, veiled=True)
        dataio.gen_synthetic(cfg, d, seed=seed)
        index = dataio.load_dataset(d)
        rng = np.random.default_rng(seed + 1)
        for seq in index:
            for oid in seq.object_ids:
                mask0 = seq.load_mask(0, oid)
                for kind in ("click", "cross", "circle", "box", "contour",
                             "scribble"):
                    sketch = seq.load_sketch(oid) if kind == "contour" else None
                    ref = refgen.generate_reference(kind, mask0, sketch=sketch,
                                                    rng=rng)
                    dataio.save_binary_png(seq.reference_path(oid, kind),
                                           ref.raster)
    return root / "train", root / "val"


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="benchmark")
    ap.add_argument("--out", default="benchmark/runs/cross_q")
    ap.add_argument("--steps", type=int, default=5000)
    ap.add_argument("--reference-kind", default="sketch")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--eval-every", type=int, default=500)
    ap.add_argument("--train-seqs", type=int, default=300)
    ap.add_argument("--val-seqs", type=int, default=30)
    args = ap.parse_args()

    t0 = time.time()
    train_root, val_root = ensure_benchmark(args.root, args.train_seqs,
                                            args.val_seqs)
    print(f"benchmark data ready in {time.time() - t0:.1f}s", flush=True)

    cfg = train.TrainConfig(
        fusion=FusionConfig(design="cross_q", sketch_level="L5",
                            visual_levels=("L5",)),
        encoder=EncoderConfig(),
        steps=args.steps, seed=args.seed,
        reference_kind=args.reference_kind, eval_every=args.eval_every)

    model = train.build_model(cfg)
    val_index = dataio.load_dataset(val_root, split="val")
    base = inference.evaluate_model(model, val_index, args.reference_kind)
    print(json.dumps({"untrained_val_jf": base.jf_mean,
                      "untrained_val_j": base.j_mean,
                      "untrained_val_f": base.f_mean}), flush=True)

    t0 = time.time()
    model, history = train.fit(cfg, train_root, args.out, val_root=val_root,
                               log_fn=lambda r: print(json.dumps(r), flush=True))
    losses = [h["loss"] for h in history]
    k = min(100, len(losses))
    final = inference.evaluate_model(model, val_index, args.reference_kind)
    summary = {
        "reference_kind": args.reference_kind,
        "steps": len(history),
        "train_seconds": round(time.time() - t0, 1),
        "initial_running_loss": float(np.mean(losses[:k])),
        "final_running_loss": float(np.mean(losses[-k:])),
        "untrained_val_jf": base.jf_mean,
        "final_val_jf": final.jf_mean,
        "final_val_j": final.j_mean,
        "final_val_f": final.f_mean,
    }
    print("SUMMARY " + json.dumps(summary), flush=True)
    Path(args.out, "summary.json").write_text(json.dumps(summary, indent=1))


if __name__ == "__main__":
    main()
