"""First-frame reference generation: aligned sketches plus the baseline
annotation kinds (click, cross, circle, box, contour, scribble, mask)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image, ImageDraw
from scipy import ndimage
from scipy.spatial import ConvexHull, QhullError
from skimage import measure
from skimage.morphology import skeletonize

from .errors import EmptyReferenceError

REFERENCE_KINDS = ("sketch", "scribble", "click", "cross", "circle", "box",
                   "contour", "mask")

BASE_CANVAS = 64
BASE_STROKE = 2
BASE_CROSS_ARM = 6
BASE_CLICK_RADIUS = 2
MAX_SKETCH_VERTICES = 64
MIN_SCRIBBLE_PIXELS = 5


@dataclass
class SketchRaster:
    canvas: np.ndarray  # binary H x W
    strokes: list  # list of polylines [[x, y], ...] in pixel coordinates
    stroke_width: int


@dataclass
class Reference:
    kind: str
    raster: np.ndarray  # binary H x W
    source_object: int = 0


def canvas_scale(canvas_hw):
    """Linear scale factor relative to the 64 x 64 base canvas."""
    return math.hypot(*canvas_hw) / math.hypot(BASE_CANVAS, BASE_CANVAS)


def stroke_width_for(canvas_hw):
    return max(1, round(BASE_STROKE * canvas_scale(canvas_hw)))


def rasterize_strokes(strokes, canvas_hw, width):
    """Draw polylines (with round joints and endpoint dots) as a binary array."""
    img = Image.new("L", (canvas_hw[1], canvas_hw[0]), 0)
    draw = ImageDraw.Draw(img)
    r = max(width / 2.0, 0.5)
    for stroke in strokes:
        pts = [(float(x), float(y)) for x, y in stroke]
        if len(pts) >= 2:
            draw.line(pts, fill=255, width=width, joint="curve")
        for x, y in (pts[0], pts[-1]) if len(pts) >= 2 else pts:
            draw.ellipse([x - r, y - r, x + r, y + r], fill=255)
    return (np.asarray(img) > 0).astype(np.uint8)


def mask_bbox(mask):
    """Tight bbox (x0, y0, x1, y1) over nonzero pixels, inclusive coordinates."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyReferenceError("empty mask has no bounding box")
    return int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max())


def _strokes_bbox(strokes):
    pts = np.concatenate([np.asarray(s, dtype=float).reshape(-1, 2) for s in strokes])
    return pts[:, 0].min(), pts[:, 1].min(), pts[:, 0].max(), pts[:, 1].max()


def align_sketch(sketch: SketchRaster, target_bbox, canvas_hw) -> SketchRaster:
    """Affinely map strokes so the sketch's tight bbox matches target_bbox
    (anisotropic scale), re-rasterized on a blank frame-sized canvas."""
    if not sketch.strokes or not np.any(sketch.canvas):
        raise EmptyReferenceError("cannot align an empty sketch")
    sx0, sy0, sx1, sy1 = _strokes_bbox(sketch.strokes)
    tx0, ty0, tx1, ty1 = target_bbox
    sx = (tx1 - tx0) / (sx1 - sx0) if sx1 > sx0 else 1.0
    sy = (ty1 - ty0) / (sy1 - sy0) if sy1 > sy0 else 1.0
    new_strokes = []
    for stroke in sketch.strokes:
        pts = np.asarray(stroke, dtype=float).reshape(-1, 2)
        mapped = np.empty_like(pts)
        mapped[:, 0] = tx0 + (pts[:, 0] - sx0) * sx
        mapped[:, 1] = ty0 + (pts[:, 1] - sy0) * sy
        new_strokes.append(mapped.tolist())
    width = stroke_width_for(canvas_hw)
    return SketchRaster(canvas=rasterize_strokes(new_strokes, canvas_hw, width),
                        strokes=new_strokes, stroke_width=width)


def synth_sketch_from_mask(mask, jitter_px, rng) -> SketchRaster:
    """Procedural sketch: trace the outer boundary of the largest connected
    component, resample to at most 64 vertices, jitter each vertex."""
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise EmptyReferenceError("cannot sketch an empty mask")
    canvas_hw = mask.shape
    if mask.sum() == 1:
        y, x = map(int, np.argwhere(mask)[0])
        strokes = [[[float(x), float(y)]]]
    else:
        labels, n = ndimage.label(mask)
        if n > 1:
            sizes = ndimage.sum_labels(mask, labels, index=np.arange(1, n + 1))
            mask = labels == (1 + int(np.argmax(sizes)))
        contours = measure.find_contours(mask.astype(float), 0.5)
        contour = max(contours, key=len)  # (row, col) points, closed
        if len(contour) > MAX_SKETCH_VERTICES:
            idx = np.linspace(0, len(contour) - 1, MAX_SKETCH_VERTICES).round().astype(int)
            contour = contour[idx]
        pts = contour[:, ::-1].astype(float)  # -> (x, y)
        pts = pts + rng.uniform(-jitter_px, jitter_px, size=pts.shape)
        strokes = [pts.tolist()]
    width = stroke_width_for(canvas_hw)
    return SketchRaster(canvas=rasterize_strokes(strokes, canvas_hw, width),
                        strokes=strokes, stroke_width=width)


def _mask_center(mask):
    """Centroid rounded to the nearest pixel, snapped onto the mask if it
    falls on background (e.g. ring-shaped masks)."""
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise EmptyReferenceError("empty mask has no center")
    cy, cx = int(round(ys.mean())), int(round(xs.mean()))
    cy = min(max(cy, 0), mask.shape[0] - 1)
    cx = min(max(cx, 0), mask.shape[1] - 1)
    if not mask[cy, cx]:
        d2 = (ys - cy) ** 2 + (xs - cx) ** 2
        j = int(np.argmin(d2))
        cy, cx = int(ys[j]), int(xs[j])
    return cy, cx


def gen_point_refs(mask, kind) -> Reference:
    """Click (small disk) or cross (two perpendicular strokes) at the mask center."""
    mask = np.asarray(mask) > 0
    if kind not in ("click", "cross"):
        raise ValueError(f"kind must be click or cross, got {kind!r}")
    cy, cx = _mask_center(mask)
    hw = mask.shape
    scale = canvas_scale(hw)
    width = stroke_width_for(hw)
    if kind == "click":
        r = max(1, round(BASE_CLICK_RADIUS * scale))
        yy, xx = np.ogrid[:hw[0], :hw[1]]
        raster = (((yy - cy) ** 2 + (xx - cx) ** 2) <= r * r).astype(np.uint8)
        return Reference(kind="click", raster=raster)
    arm = max(2, round(BASE_CROSS_ARM * scale))
    strokes = [[[cx - arm, cy], [cx + arm, cy]], [[cx, cy - arm], [cx, cy + arm]]]
    return Reference(kind="cross", raster=rasterize_strokes(strokes, hw, width))


def gen_fit_refs(mask, kind) -> Reference:
    """Outline of the tight bbox, or of the circle circumscribing that bbox."""
    mask = np.asarray(mask) > 0
    if kind not in ("box", "circle"):
        raise ValueError(f"kind must be box or circle, got {kind!r}")
    x0, y0, x1, y1 = mask_bbox(mask)
    hw = mask.shape
    width = stroke_width_for(hw)
    img = Image.new("L", (hw[1], hw[0]), 0)
    draw = ImageDraw.Draw(img)
    if kind == "box":
        draw.rectangle([x0, y0, x1, y1], outline=255, width=width)
    else:
        cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
        r = math.hypot(x1 - x0, y1 - y0) / 2.0
        if r < 0.5:
            draw.point([(round(cx), round(cy))], fill=255)
        else:
            draw.ellipse([cx - r, cy - r, cx + r, cy + r], outline=255, width=width)
    return Reference(kind=kind, raster=(np.asarray(img) > 0).astype(np.uint8))


def gen_contour(sketch: SketchRaster) -> Reference:
    """Convex hull of the sketch's foreground pixels, drawn as an outline."""
    ys, xs = np.nonzero(sketch.canvas)
    if ys.size == 0:
        raise EmptyReferenceError("cannot take the hull of an empty sketch")
    hw = sketch.canvas.shape
    width = stroke_width_for(hw)
    pts = np.stack([xs, ys], axis=1).astype(float)
    if len(pts) < 3:
        hull_pts = pts
    else:
        try:
            hull = ConvexHull(pts)
            hull_pts = pts[hull.vertices]
        except QhullError:  # collinear points: degenerate hull is a segment
            order = np.lexsort((pts[:, 1], pts[:, 0]))
            hull_pts = pts[order][[0, -1]]
    stroke = hull_pts.tolist()
    if len(stroke) >= 3:
        stroke.append(stroke[0])
    return Reference(kind="contour",
                     raster=rasterize_strokes([stroke], hw, width))


def gen_scribble(mask, rng=None) -> Reference:
    """Skeleton of the mask (largest component); tiny skeletons fall back to a
    centroid click."""
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise EmptyReferenceError("cannot scribble an empty mask")
    skel = skeletonize(mask)
    if skel.any():
        labels, n = ndimage.label(skel, structure=np.ones((3, 3)))
        if n > 1:
            sizes = ndimage.sum_labels(skel, labels, index=np.arange(1, n + 1))
            skel = labels == (1 + int(np.argmax(sizes)))
    if skel.sum() < MIN_SCRIBBLE_PIXELS:
        return Reference(kind="scribble", raster=gen_point_refs(mask, "click").raster)
    return Reference(kind="scribble", raster=skel.astype(np.uint8))


def gen_mask_ref(mask) -> Reference:
    mask = np.asarray(mask) > 0
    if not mask.any():
        raise EmptyReferenceError("empty first-frame mask")
    return Reference(kind="mask", raster=mask.astype(np.uint8))


def generate_reference(kind, mask, sketch: SketchRaster | None = None, rng=None):
    """Dispatch a reference kind to its generator (sketch/contour need strokes)."""
    if kind == "mask":
        return gen_mask_ref(mask)
    if kind in ("click", "cross"):
        return gen_point_refs(mask, kind)
    if kind in ("box", "circle"):
        return gen_fit_refs(mask, kind)
    if kind == "scribble":
        return gen_scribble(mask, rng)
    if kind == "contour":
        if sketch is None:
            raise EmptyReferenceError("contour generation requires a sketch")
        return gen_contour(sketch)
    if kind == "sketch":
        if sketch is None:
            raise EmptyReferenceError("sketch reference requires sketch strokes")
        return Reference(kind="sketch", raster=sketch.canvas.copy())
    raise ValueError(f"unknown reference kind {kind!r}")
