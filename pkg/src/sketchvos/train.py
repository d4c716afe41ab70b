"""Clip-based training loop: three-frame clips, BCE over all predicted frames,
Adam updates, periodic validation, checkpointing."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import dataio, inference
from . import memory as mem
from .autodiff import adam_step, zero_grads
from .encoders import EncoderConfig
from .errors import ConfigError, DivergenceError, SamplingError
from .fusion import FusionConfig
from .model import SketchVOSModel
from .refgen import REFERENCE_KINDS


@dataclass
class TrainConfig:
    fusion: FusionConfig = field(default_factory=FusionConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    lr: float = 1e-4  # random-init toy nets need a larger step than pretrained-backbone presets
    steps: int = 500
    batch_size: int = 4
    seed: int = 0
    reference_kind: str = "sketch"
    eval_every: int = 0  # 0 disables periodic validation
    flip_prob: float = 0.5
    affinity_mode: str = "l2"

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.reference_kind not in REFERENCE_KINDS:
            raise ConfigError(f"unknown reference kind {self.reference_kind!r}")


def build_model(cfg: TrainConfig) -> SketchVOSModel:
    return SketchVOSModel(cfg.encoder, cfg.fusion, seed=cfg.seed,
                          affinity_mode=cfg.affinity_mode)


def clip_loss(model, clip: dataio.TrainingClip):
    """Forward one clip and return the mean BCE over all predicted frames
    (the frame-0 bootstrap prediction included)."""
    masks, _ = mem.propagate(clip.frames, clip.reference, model, every_k=1)
    losses = [ad.reshape(ad.bce_loss(m, g.astype(np.float32)), (1,))
              for m, g in zip(masks, clip.masks)]
    return ad.mean(ad.concat(losses))


def train_step(clips, model, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One optimizer step over a batch of clips; returns the scalar loss."""
    losses = [ad.reshape(clip_loss(model, c), (1,)) for c in clips]
    loss = ad.mean(ad.concat(losses))
    if not math.isfinite(loss.item()):
        raise DivergenceError(f"non-finite training loss: {loss.item()} "
                              f"(clips: {[(c.sequence, c.object_id) for c in clips]})")
    params = model.parameters()
    zero_grads(params)
    loss.backward()
    adam_step(params, lr, beta1, beta2, eps)
    return loss.item()


def _flip_clip(clip: dataio.TrainingClip) -> dataio.TrainingClip:
    return dataio.TrainingClip(
        sequence=clip.sequence, object_id=clip.object_id, indices=clip.indices,
        frames=[np.ascontiguousarray(f[:, ::-1]) for f in clip.frames],
        masks=[np.ascontiguousarray(m[:, ::-1]) for m in clip.masks],
        reference=np.ascontiguousarray(clip.reference[:, ::-1]))


def sample_batch(index, cfg: TrainConfig, rng):
    clips = []
    while len(clips) < cfg.batch_size:
        seq = index.sequences[rng.integers(len(index.sequences))]
        oid = seq.object_ids[rng.integers(len(seq.object_ids))]
        try:
            clip = dataio.sample_clip(seq, oid, rng)
        except SamplingError:
            continue
        if cfg.reference_kind != "sketch":
            clip.reference = inference.get_reference(seq, oid, cfg.reference_kind)
        if rng.random() < cfg.flip_prob:
            clip = _flip_clip(clip)
        clips.append(clip)
    return clips


# -- checkpointing -----------------------------------------------------------


def save_checkpoint(path, model, step=0, rng=None, cfg: TrainConfig | None = None):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    state = model.state_dict()
    state["__step"] = np.asarray(step)
    if rng is not None:
        state["__rng_state"] = np.frombuffer(
            json.dumps(rng.bit_generator.state).encode(), dtype=np.uint8)
    meta = {
        "encoder": vars(model.enc_cfg) | {"widths": list(model.enc_cfg.widths)},
        "fusion": vars(model.fusion_cfg) | {
            "visual_levels": list(model.fusion_cfg.visual_levels)},
        "affinity_mode": model.affinity_mode,
    }
    if cfg is not None:
        meta["train"] = {k: v for k, v in vars(cfg).items()
                         if k not in ("fusion", "encoder")}
    state["__meta"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(),
                                    dtype=np.uint8)
    np.savez(path, **state)


def load_checkpoint(path):
    """Rebuild the model (and optimizer/rng state) from a checkpoint archive."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    with np.load(path) as z:
        state = {k: z[k] for k in z.files}
    meta = json.loads(bytes(state.pop("__meta")).decode())
    enc = meta["encoder"].copy()
    enc["widths"] = tuple(enc["widths"])
    fus = meta["fusion"].copy()
    fus["visual_levels"] = tuple(fus["visual_levels"])
    model = SketchVOSModel(EncoderConfig(**enc), FusionConfig(**fus),
                           affinity_mode=meta.get("affinity_mode", "l2"))
    step = int(state.pop("__step"))
    rng_state = None
    if "__rng_state" in state:
        rng_state = json.loads(bytes(state.pop("__rng_state")).decode())
    model.load_state_dict(state)
    return model, step, rng_state, meta


# -- fit ---------------------------------------------------------------------


def fit(cfg: TrainConfig, data_root, out_dir, val_root=None, resume=None,
        log_fn=None):
    """Train for cfg.steps; writes a jsonl log, a last and (when validating)
    a best-J&F checkpoint. Returns (model, history)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = dataio.load_dataset(data_root, split="train")
    val_index = dataio.load_dataset(val_root, split="val") if val_root else None

    if resume:
        model, start_step, rng_state, _ = load_checkpoint(resume)
        rng = np.random.default_rng(cfg.seed)
        if rng_state is not None:
            rng.bit_generator.state = rng_state
    else:
        model = build_model(cfg)
        start_step = 0
        rng = np.random.default_rng(cfg.seed)

    history = []
    best_jf = -1.0
    log_path = out_dir / "train_log.jsonl"
    with open(log_path, "a") as log:
        for step in range(start_step + 1, cfg.steps + 1):
            clips = sample_batch(index, cfg, rng)
            try:
                loss = train_step(clips, model, cfg.lr)
            except DivergenceError:
                save_checkpoint(out_dir / "last.npz", model, step - 1, rng, cfg)
                raise
            rec = {"step": step, "loss": loss}
            if val_index is not None and cfg.eval_every and step % cfg.eval_every == 0:
                report = inference.evaluate_model(model, val_index,
                                                 cfg.reference_kind)
                rec.update(val_j=report.j_mean, val_f=report.f_mean,
                           val_jf=report.jf_mean)
                if report.jf_mean > best_jf:
                    best_jf = report.jf_mean
                    save_checkpoint(out_dir / "best.npz", model, step, rng, cfg)
            history.append(rec)
            log.write(json.dumps(rec) + "\n")
            if log_fn:
                log_fn(rec)
        save_checkpoint(out_dir / "last.npz", model, cfg.steps, rng, cfg)
    return model, history
