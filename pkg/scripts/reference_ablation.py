#!/usr/bin/env python3
"""Train identical models per reference kind on the distractor benchmark and
report validation J&F per kind (the sketch-vs-point ordering probe)."""

import argparse
import json
import time
from pathlib import Path

import numpy as np

from run_distractor_benchmark import ensure_benchmark

from sketchvos import dataio, inference, train
from sketchvos.encoders import EncoderConfig
from sketchvos.fusion import FusionConfig


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--root", default="benchmark")
    ap.add_argument("--out", default="benchmark/runs/ablation")
    ap.add_argument("--steps", type=int, default=2000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--kinds", default="sketch,contour,circle,cross")
    args = ap.parse_args()

    train_root, val_root = ensure_benchmark(args.root)
    val_index = dataio.load_dataset(val_root, split="val")
    results = {}
    for kind in args.kinds.split(","):
        cfg = train.TrainConfig(
            fusion=FusionConfig(design="cross_q", sketch_level="L5",
                                visual_levels=("L5",)),
            encoder=EncoderConfig(),
            steps=args.steps, seed=args.seed, reference_kind=kind)
        t0 = time.time()
        model, history = train.fit(cfg, train_root, Path(args.out) / kind)
        report = inference.evaluate_model(model, val_index, kind)
        results[kind] = {
            "val_jf": report.jf_mean, "val_j": report.j_mean,
            "val_f": report.f_mean,
            "final_loss": float(np.mean([h["loss"] for h in history[-100:]])),
            "seconds": round(time.time() - t0, 1),
        }
        print(f"{kind}: " + json.dumps(results[kind]), flush=True)
    order = sorted(results, key=lambda k: -results[k]["val_jf"])
    print("ordering: " + " > ".join(f"{k}({results[k]['val_jf']:.3f})"
                                    for k in order))
    Path(args.out).mkdir(parents=True, exist_ok=True)
    Path(args.out, "results.json").write_text(json.dumps(results, indent=1))


if __name__ == "__main__":
    main()
