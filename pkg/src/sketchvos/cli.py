"""Command-line surface: dataset generation, reference generation, training,
evaluation, visualization, and self-checks."""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml
from PIL import Image

from . import checks, dataio, inference, metrics, refgen, train as train_mod
from .encoders import EncoderConfig
from .errors import ConfigError, IntegrityError, SketchVOSError
from .fusion import FusionConfig
from .train import TrainConfig

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG = 2


# -- config file handling ----------------------------------------------------

SECTION_TYPES = {"encoder": EncoderConfig, "fusion": FusionConfig,
                 "train": TrainConfig}
DATA_KEYS = ("root", "val_root", "out_dir")
EVAL_KEYS = ("reference_kind", "every_k")

_TUPLE_FIELDS = {"widths", "visual_levels", "canvas"}


def _build_section(cls, raw, skip=()):
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(raw) - set(fields) - set(skip)
    if unknown:
        raise ConfigError(f"unknown keys in {cls.__name__} section: {sorted(unknown)}")
    kwargs = {}
    for k, v in raw.items():
        if k in skip:
            continue
        if k in _TUPLE_FIELDS and isinstance(v, list):
            v = tuple(v)
        kwargs[k] = v
    return cls(**kwargs)


def load_run_config(path):
    """Parse the structured run config file; unknown keys are rejected."""
    raw = yaml.safe_load(Path(path).read_text()) or {}
    unknown = set(raw) - {"data", "encoder", "fusion", "train", "eval"}
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    data = raw.get("data", {})
    bad = set(data) - set(DATA_KEYS)
    if bad:
        raise ConfigError(f"unknown keys in data section: {sorted(bad)}")
    ev = raw.get("eval", {})
    bad = set(ev) - set(EVAL_KEYS)
    if bad:
        raise ConfigError(f"unknown keys in eval section: {sorted(bad)}")
    enc = _build_section(EncoderConfig, raw.get("encoder", {}))
    fus = _build_section(FusionConfig, raw.get("fusion", {}))
    tr_raw = dict(raw.get("train", {}))
    tr = _build_section(TrainConfig, tr_raw, skip=("fusion", "encoder"))
    tr.fusion = fus
    tr.encoder = enc
    return {"data": data, "train": tr, "eval": ev}


def reference_config_text():
    """Reference config with every key at its default."""
    cfg = {
        "data": {"root": "data/train", "val_root": "data/val", "out_dir": "runs/exp"},
        "encoder": {f.name: (list(v) if isinstance(v := getattr(EncoderConfig(), f.name), tuple) else v)
                    for f in dataclasses.fields(EncoderConfig)},
        "fusion": {f.name: (list(v) if isinstance(v := getattr(FusionConfig(), f.name), tuple) else v)
                   for f in dataclasses.fields(FusionConfig)},
        "train": {f.name: getattr(TrainConfig(), f.name)
                  for f in dataclasses.fields(TrainConfig)
                  if f.name not in ("fusion", "encoder")},
        "eval": {"reference_kind": "sketch", "every_k": 5},
    }
    return yaml.safe_dump(cfg, sort_keys=False)


def echo_config(out_dir, payload):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config_echo.json").write_text(
        json.dumps(payload, sort_keys=True, indent=1, default=str))


# -- commands ----------------------------------------------------------------


def cmd_gen_synth(args):
    cfg = dataio.SynthConfig(
        n_sequences=args.seqs, frames_per_seq=args.frames,
        canvas=(args.size, args.size), n_objects=args.objects,
        distractor_mode=args.distractors, motion=args.motion,
        occlusion=args.occlusion, camouflage=args.camouflage, veiled=args.veiled)
    dataio.gen_synthetic(cfg, args.out, seed=args.seed, name_prefix=args.prefix)
    echo_config(args.out, {"command": "gen-synth", **vars(args)})
    print(f"wrote {args.seqs} sequences to {args.out}")
    return EXIT_OK


def cmd_gen_refs(args):
    index = dataio.load_dataset(args.data)
    kinds = [k.strip() for k in args.kinds.split(",") if k.strip()]
    for kind in kinds:
        if kind not in refgen.REFERENCE_KINDS:
            raise ConfigError(f"unknown reference kind {kind!r}; "
                              f"valid: {', '.join(refgen.REFERENCE_KINDS)}")
    rng = np.random.default_rng(args.seed)
    n = 0
    for seq in index:
        for oid in seq.object_ids:
            mask0 = seq.load_mask(0, oid)
            for kind in kinds:
                sketch = None
                if kind in ("contour", "sketch"):
                    if not seq.strokes_path(oid).exists():
                        raise ConfigError(
                            f"kind {kind!r} needs sketches, but "
                            f"{seq.strokes_path(oid)} is missing "
                            "(run gen-synth or provide sketches first)")
                    sketch = seq.load_sketch(oid)
                ref = refgen.generate_reference(kind, mask0, sketch=sketch, rng=rng)
                dataio.save_binary_png(seq.reference_path(oid, kind), ref.raster)
                n += 1
    print(f"wrote {n} reference rasters")
    return EXIT_OK


def cmd_train(args):
    run = load_run_config(args.config)
    data = run["data"]
    if "root" not in data:
        raise ConfigError("config data section needs a 'root' key")
    out_dir = Path(data.get("out_dir", "runs/exp"))
    echo_config(out_dir, {
        "command": "train", "config": str(args.config),
        "train": {k: v for k, v in vars(run["train"]).items()
                  if k not in ("fusion", "encoder")},
        "fusion": vars(run["train"].fusion),
        "encoder": vars(run["train"].encoder),
        "data": data})
    model, history = train_mod.fit(run["train"], data["root"], out_dir,
                                   val_root=data.get("val_root"),
                                   resume=args.resume,
                                   log_fn=lambda r: print(json.dumps(r)))
    print(f"done: {len(history)} steps, checkpoints in {out_dir}")
    return EXIT_OK


def cmd_eval(args):
    model, step, _, _ = train_mod.load_checkpoint(args.checkpoint)
    index = dataio.load_dataset(args.data, split="val")
    out = Path(args.out)
    pred_root = out / "Predictions"
    inference.write_predictions(model, index, pred_root,
                                reference_kind=args.reference_kind,
                                every_k=args.every_k)
    report = metrics.evaluate_dataset(pred_root, args.data)
    report.write_csv(out)
    echo_config(out, {"command": "eval", **{k: str(v) for k, v in vars(args).items()
                                            if k != "func"}, "step": step})
    print(f"J-Mean {report.j_mean:.4f}  F-Mean {report.f_mean:.4f}  "
          f"J&F-Mean {report.jf_mean:.4f}")
    return EXIT_OK


def _overlay_frame(frame_u8, label, alpha=0.4):
    out = frame_u8.astype(np.float32)
    for oid in np.unique(label):
        if oid == 0:
            continue
        color = dataio._PALETTE[oid].astype(np.float32)
        m = label == oid
        out[m] = (1 - alpha) * out[m] + alpha * color
        border = metrics.mask_boundary(m)
        out[border] = color
    return out.clip(0, 255).astype(np.uint8)


def cmd_visualize(args):
    index = dataio.load_dataset(args.data)
    pred_root = Path(args.predictions)
    out_root = Path(args.out)
    for seq in index:
        seq_pred = pred_root / seq.name
        if not seq_pred.is_dir():
            continue
        (out_root / seq.name).mkdir(parents=True, exist_ok=True)
        for t in range(seq.n_frames):
            frame = (seq.load_frame(t) * 255).astype(np.uint8)
            label_path = seq_pred / f"{t:05d}.png"
            label = dataio.load_palette_png(label_path) if label_path.exists() \
                else np.zeros(frame.shape[:2], dtype=np.uint8)
            img = _overlay_frame(frame, label)
            if t == 0:
                img = _paste_reference_inset(img, seq)
            Image.fromarray(img, mode="RGB").save(out_root / seq.name / f"{t:05d}.png")
    print(f"wrote overlays to {out_root}")
    return EXIT_OK


def _paste_reference_inset(img, seq):
    h, w = img.shape[:2]
    combined = np.zeros((h, w), dtype=np.uint8)
    for oid in seq.object_ids:
        path = seq.reference_path(oid, "sketch")
        if path.exists():
            combined |= dataio.load_binary_png(path)
    small = np.asarray(Image.fromarray(combined * 255).resize(
        (w // 3, h // 3), Image.BILINEAR))
    inset = np.stack([small] * 3, axis=2)
    img = img.copy()
    img[:h // 3, :w // 3] = inset
    return img


def cmd_check(args):
    results = checks.run(args.suite)
    failed = [r for r in results if not r[1]]
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
    if failed:
        print(f"{len(failed)} of {len(results)} checks failed")
        return EXIT_CHECK_FAILED
    print(f"all {len(results)} checks passed")
    return EXIT_OK


# -- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="sketchvos",
                                description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="generate a synthetic dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--seqs", type=int, default=10)
    g.add_argument("--frames", type=int, default=12)
    g.add_argument("--size", type=int, default=64)
    g.add_argument("--objects", type=int, default=2)
    g.add_argument("--distractors", action=argparse.BooleanOptionalAction, default=True)
    g.add_argument("--motion", choices=dataio.MOTIONS, default="linear")
    g.add_argument("--occlusion", action="store_true")
    g.add_argument("--camouflage", action="store_true")
    g.add_argument("--veiled", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--prefix", default="seq")
    g.set_defaults(func=cmd_gen_synth)

    g = sub.add_parser("gen-refs", help="generate baseline reference rasters")
    g.add_argument("--data", required=True)
    g.add_argument("--kinds", default="click,cross,circle,box,contour,scribble")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_gen_refs)

    g = sub.add_parser("train", help="train a model from a run config file")
    g.add_argument("--config")
    g.add_argument("--resume")
    g.add_argument("--emit-config", metavar="PATH",
                   help="write a reference config with all defaults and exit")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="propagate and score a dataset")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--reference-kind", default="sketch")
    g.add_argument("--every-k", type=int, default=5)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("visualize", help="render prediction overlays")
    g.add_argument("--predictions", required=True)
    g.add_argument("--data", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_visualize)

    g = sub.add_parser("check", help="run verification suites")
    g.add_argument("--suite", choices=["grads", "metrics", "attention", "all"],
                   default="all")
    g.set_defaults(func=cmd_check)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "train":
            if args.emit_config:
                Path(args.emit_config).write_text(reference_config_text())
                print(f"wrote reference config to {args.emit_config}")
                return EXIT_OK
            if not args.config:
                raise ConfigError("train requires --config (or --emit-config)")
        return args.func(args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except IntegrityError as e:
        print(f"integrity error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except SketchVOSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
