"""Dataset model, DAVIS-style on-disk layout, deterministic synthetic
moving-shapes generator, and training-clip sampling."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage

from . import refgen
from .errors import ConfigError, IntegrityError, SamplingError

SHAPES = ("disk", "square", "triangle", "star")
MOTIONS = ("linear", "sinusoidal")
SAMPLING_WINDOW = 25  # max temporal index reachable from frame 0 in a clip
SKETCH_JITTER_PX = 1.5

# VOC-style palette: index 0 background, k = object id
_PALETTE = np.zeros((256, 3), dtype=np.uint8)
for _i in range(256):
    _c, _v = _i, np.zeros(3, dtype=np.uint8)
    for _j in range(8):
        _v[0] |= ((_c >> 0) & 1) << (7 - _j)
        _v[1] |= ((_c >> 1) & 1) << (7 - _j)
        _v[2] |= ((_c >> 2) & 1) << (7 - _j)
        _c >>= 3
    _PALETTE[_i] = _v


def save_palette_png(path, label):
    img = Image.fromarray(label.astype(np.uint8), mode="P")
    img.putpalette(_PALETTE.reshape(-1).tolist())
    img.save(path)


def load_palette_png(path):
    return np.asarray(Image.open(path).convert("P"), dtype=np.uint8)


def save_binary_png(path, raster):
    Image.fromarray((np.asarray(raster) > 0).astype(np.uint8) * 255, mode="L").save(path)


def load_binary_png(path):
    return (np.asarray(Image.open(path).convert("L")) > 0).astype(np.uint8)


# -- records -----------------------------------------------------------------


@dataclass
class SequenceRecord:
    name: str
    root: Path
    n_frames: int
    object_ids: list
    absent_frames: dict  # object_id -> sorted list of frame indices

    def frame_path(self, t):
        return self.root / "JPEGImages" / self.name / f"{t:05d}.png"

    def mask_path(self, t):
        return self.root / "Annotations" / self.name / f"{t:05d}.png"

    def reference_path(self, object_id, kind):
        return self.root / "References" / self.name / f"{object_id}_{kind}.png"

    def strokes_path(self, object_id):
        return self.root / "References" / self.name / f"{object_id}_sketch.strokes.json"

    def load_frame(self, t):
        """H x W x 3 float32 in [0, 1]."""
        return np.asarray(Image.open(self.frame_path(t)).convert("RGB"),
                          dtype=np.float32) / 255.0

    def load_label(self, t):
        return load_palette_png(self.mask_path(t))

    def load_mask(self, t, object_id):
        return (self.load_label(t) == object_id).astype(np.uint8)

    def load_reference(self, object_id, kind):
        path = self.reference_path(object_id, kind)
        if not path.exists():
            raise IntegrityError(f"missing reference {path}")
        return load_binary_png(path)

    def load_sketch(self, object_id):
        strokes = json.loads(self.strokes_path(object_id).read_text())
        canvas = self.load_reference(object_id, "sketch")
        return refgen.SketchRaster(canvas=canvas, strokes=strokes,
                                   stroke_width=refgen.stroke_width_for(canvas.shape))


@dataclass
class DatasetIndex:
    root: Path
    split: str
    sequences: list  # of SequenceRecord

    def __iter__(self):
        return iter(self.sequences)

    def __len__(self):
        return len(self.sequences)


@dataclass
class TrainingClip:
    sequence: str
    object_id: int
    indices: tuple  # (0, i, j), strictly increasing
    frames: list  # three H x W x 3 float arrays
    masks: list  # three binary H x W arrays
    reference: np.ndarray  # binary H x W


# -- loading -----------------------------------------------------------------


def load_dataset(root, split="train") -> DatasetIndex:
    root = Path(root)
    if not root.exists():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    meta_path = root / "meta.json"
    problems = []
    for sub in ("JPEGImages", "Annotations", "References"):
        if not (root / sub).is_dir():
            problems.append(f"missing directory {root / sub}")
    if not meta_path.exists():
        problems.append(f"missing {meta_path}")
    if problems:
        raise IntegrityError("; ".join(problems))

    meta = json.loads(meta_path.read_text())
    sequences = []
    for name in sorted(meta["sequences"]):
        info = meta["sequences"][name]
        n_frames = info["n_frames"]
        object_ids = sorted(int(k) for k in info["objects"])
        absent = {int(k): v.get("absent_frames", [])
                  for k, v in info["objects"].items()}
        rec = SequenceRecord(name=name, root=root, n_frames=n_frames,
                             object_ids=object_ids, absent_frames=absent)
        n_imgs = len(list((root / "JPEGImages" / name).glob("*.png")))
        n_masks = len(list((root / "Annotations" / name).glob("*.png")))
        if n_imgs != n_frames or n_masks != n_frames:
            problems.append(f"sequence {name}: meta says {n_frames} frames, "
                            f"found {n_imgs} images and {n_masks} masks")
            continue
        label0 = rec.load_label(0)
        extra = set(np.unique(label0)) - {0} - set(object_ids)
        if extra:
            problems.append(f"sequence {name}: mask object ids {sorted(extra)} "
                            "absent from metadata")
        sequences.append(rec)
    if problems:
        raise IntegrityError("; ".join(problems))
    return DatasetIndex(root=root, split=split, sequences=sequences)


# -- synthetic generation ----------------------------------------------------


@dataclass
class SynthConfig:
    n_sequences: int = 10
    frames_per_seq: int = 12
    canvas: tuple = (64, 64)
    n_objects: int = 2
    distractor_mode: bool = True
    motion: str = "linear"
    occlusion: bool = False
    # camouflage draws object colors close to the background and adds pixel
    # noise, so object extent cannot be read off the image alone and must come
    # from the first-frame reference (position-only marks underdetermine it)
    camouflage: bool = False
    # veiled rendering paints every object as a uniform disk 1.45x its
    # circumradius while ground truth keeps the true shape: the image then
    # shows position and size but not which shape hides under the veil, so a
    # position-only reference underdetermines the mask while a sketch of the
    # outline identifies it
    veiled: bool = False

    def __post_init__(self):
        if self.canvas[0] < 32 or self.canvas[1] < 32:
            raise ConfigError("canvas must be at least 32 x 32")
        if self.frames_per_seq < 3:
            raise ConfigError("frames_per_seq must be >= 3")
        if not 1 <= self.n_objects <= 4:
            raise ConfigError("n_objects must be in [1, 4]")
        if self.motion not in MOTIONS:
            raise ConfigError(f"motion must be one of {MOTIONS}")
        if self.distractor_mode and self.n_objects < 2:
            raise ConfigError("distractor_mode needs at least 2 objects")


def _shape_polygon(shape, cx, cy, r):
    if shape == "square":
        return [(cx - r, cy - r), (cx + r, cy - r), (cx + r, cy + r), (cx - r, cy + r)]
    if shape == "triangle":
        ang = [-math.pi / 2, math.pi / 6, 5 * math.pi / 6]
        return [(cx + r * math.cos(a), cy + r * math.sin(a)) for a in ang]
    if shape == "star":
        pts = []
        for k in range(10):
            rad = r if k % 2 == 0 else 0.45 * r
            a = -math.pi / 2 + k * math.pi / 5
            pts.append((cx + rad * math.cos(a), cy + rad * math.sin(a)))
        return pts
    raise ValueError(shape)


def rasterize_shape(shape, center, r, canvas_hw):
    """Binary mask of one shape instance (used both by the generator and as
    the per-frame oracle in tests)."""
    img = Image.new("L", (canvas_hw[1], canvas_hw[0]), 0)
    draw = ImageDraw.Draw(img)
    cx, cy = center
    if shape == "disk":
        draw.ellipse([cx - r, cy - r, cx + r, cy + r], fill=255)
    else:
        draw.polygon(_shape_polygon(shape, cx, cy, r), fill=255)
    return (np.asarray(img) > 0).astype(np.uint8)


@dataclass
class _ObjectSpec:
    shape: str
    color: tuple
    r: float
    start: np.ndarray  # (x, y)
    vel: np.ndarray
    amp: np.ndarray
    freq: np.ndarray
    phase: np.ndarray

    def center_at(self, t, motion, canvas_hw):
        h, w = canvas_hw
        if motion == "linear":
            # reflect off walls so the shape stays fully inside
            pos = self.start + self.vel * t
            lo = self.r + 1
            span = np.array([w, h]) - 2 * lo
            folded = np.mod(pos - lo, 2 * span)
            folded = np.where(folded > span, 2 * span - folded, folded)
            return tuple(folded + lo)
        return tuple(self.start + self.amp * np.sin(self.freq * t + self.phase))


def _sample_objects(cfg: SynthConfig, rng):
    h, w = cfg.canvas
    n = cfg.n_objects
    shapes = [SHAPES[rng.integers(len(SHAPES))] for _ in range(n)]
    colors = [tuple(int(c) for c in rng.integers(60, 256, size=3)) for _ in range(n)]
    radii = [float(rng.uniform(min(h, w) / 9, min(h, w) / 5.5)) for _ in range(n)]
    if cfg.distractor_mode:
        # at least two objects share shape, color and size
        shapes[1], colors[1], radii[1] = shapes[0], colors[0], radii[0]
    sep = 0.6 if cfg.occlusion else 1.15
    # joint retry: a single awkward first placement (e.g. a large object dead
    # centre) can make every later placement infeasible, so restart all starts
    for _ in range(200):
        starts = []
        for i in range(n):
            r = radii[i]
            for _ in range(50):
                cand = np.array([rng.uniform(r + 2, w - r - 2),
                                 rng.uniform(r + 2, h - r - 2)])
                if all(np.linalg.norm(cand - s) > (r + radii[j]) * sep
                       for j, s in enumerate(starts)):
                    starts.append(cand)
                    break
            else:
                break
        if len(starts) == n:
            break
    else:
        raise ConfigError("could not place objects without overlap; "
                          "reduce n_objects or enlarge canvas")
    specs = []
    for i in range(n):
        start = starts[i]
        speed = rng.uniform(0.5, 2.0, size=2) * rng.choice([-1, 1], size=2)
        amp = rng.uniform(2, min(h, w) / 6, size=2)
        freq = rng.uniform(0.2, 0.7, size=2)
        phase = rng.uniform(0, 2 * math.pi, size=2)
        specs.append(_ObjectSpec(shape=shapes[i], color=colors[i], r=radii[i],
                                 start=start, vel=speed, amp=amp, freq=freq,
                                 phase=phase))
    return specs


def gen_synthetic(cfg: SynthConfig, root, seed=0, name_prefix="seq"):
    """Write a synthetic dataset (frames, palette masks, sketches, meta.json).

    Deterministic given (cfg, seed): identical arguments produce a
    byte-identical tree.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    h, w = cfg.canvas
    meta = {"sequences": {}}
    for s in range(cfg.n_sequences):
        name = f"{name_prefix}{s:04d}"
        seq_rng = np.random.default_rng(rng.integers(2 ** 63))
        for _ in range(50):
            specs = _sample_objects(cfg, seq_rng)
            first = [rasterize_shape(sp.shape, sp.center_at(0, cfg.motion, cfg.canvas),
                                     sp.r, cfg.canvas) for sp in specs]
            overlap = sum(first).max() > 1
            if not overlap and all(m.any() for m in first):
                break
        else:
            raise ConfigError("failed to build disjoint first-frame masks")

        (root / "JPEGImages" / name).mkdir(parents=True, exist_ok=True)
        (root / "Annotations" / name).mkdir(parents=True, exist_ok=True)
        (root / "References" / name).mkdir(parents=True, exist_ok=True)

        bg = np.array((40, 44, 52), dtype=np.uint8) + seq_rng.integers(0, 30, size=3).astype(np.uint8)
        if cfg.camouflage:
            # recolor objects to sit just off the background, keeping the
            # distractor pair identical
            deltas = [seq_rng.integers(12, 33, size=3) * seq_rng.choice([-1, 1], size=3)
                      for _ in specs]
            if cfg.distractor_mode:
                deltas[1] = deltas[0]
            for sp, d in zip(specs, deltas):
                sp.color = tuple(int(c) for c in np.clip(bg.astype(int) + d, 0, 255))
        absent = {sp_id: [] for sp_id in range(1, len(specs) + 1)}
        for t in range(cfg.frames_per_seq):
            frame = np.broadcast_to(bg, (h, w, 3)).copy()
            label = np.zeros((h, w), dtype=np.uint8)
            for oid, sp in enumerate(specs, start=1):  # painter's order: later ids on top
                center = sp.center_at(t, cfg.motion, cfg.canvas)
                m = rasterize_shape(sp.shape, center, sp.r, cfg.canvas)
                if cfg.veiled:
                    # 1.45 covers every shape's corners (square corners sit at
                    # sqrt(2) x r), so the veil leaks no class information
                    vis = rasterize_shape("disk", center, 1.45 * sp.r, cfg.canvas)
                else:
                    vis = m
                frame[vis > 0] = sp.color
                label[m > 0] = oid
            for oid in absent:
                if not np.any(label == oid):
                    absent[oid].append(t)
            if cfg.camouflage:
                # low-frequency clutter at object-level contrast: pooling
                # cannot average it out, so clutter edges stay confusable
                # with the true object boundary
                coarse = seq_rng.integers(-26, 27, size=(8, 8, 3)).astype(np.float64)
                clutter = ndimage.zoom(coarse, (h / 8, w / 8, 1), order=1)
                noise = seq_rng.integers(-10, 11, size=frame.shape)
                frame = np.clip(frame.astype(np.float64) + clutter + noise,
                                0, 255).astype(np.uint8)
            Image.fromarray(frame, mode="RGB").save(
                root / "JPEGImages" / name / f"{t:05d}.png")
            save_palette_png(root / "Annotations" / name / f"{t:05d}.png", label)

        label0 = load_palette_png(root / "Annotations" / name / "00000.png")
        for oid in range(1, len(specs) + 1):
            mask0 = (label0 == oid).astype(np.uint8)
            sketch = refgen.synth_sketch_from_mask(mask0, SKETCH_JITTER_PX, seq_rng)
            save_binary_png(root / "References" / name / f"{oid}_sketch.png",
                            sketch.canvas)
            (root / "References" / name / f"{oid}_sketch.strokes.json").write_text(
                json.dumps(sketch.strokes))
        meta["sequences"][name] = {
            "n_frames": cfg.frames_per_seq,
            "objects": {str(oid): {"absent_frames": absent[oid]}
                        for oid in range(1, len(specs) + 1)},
        }
    (root / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    return root


# -- clip sampling -----------------------------------------------------------


def sample_clip(seq: SequenceRecord, object_id, rng) -> TrainingClip:
    """Training clip {0, i, j} with 0 < i < j drawn uniformly without
    replacement from the first SAMPLING_WINDOW frames."""
    if seq.n_frames < 3:
        raise SamplingError(f"sequence {seq.name} has fewer than 3 frames")
    mask0 = seq.load_mask(0, object_id)
    if not mask0.any():
        raise SamplingError(f"object {object_id} has no first-frame mask in {seq.name}")
    hi = min(seq.n_frames - 1, SAMPLING_WINDOW)
    i, j = sorted(rng.choice(np.arange(1, hi + 1), size=2, replace=False).tolist())
    indices = (0, int(i), int(j))
    frames = [seq.load_frame(t) for t in indices]
    masks = [mask0] + [seq.load_mask(t, object_id) for t in indices[1:]]
    return TrainingClip(sequence=seq.name, object_id=object_id, indices=indices,
                        frames=frames, masks=masks,
                        reference=seq.load_reference(object_id, "sketch"))
