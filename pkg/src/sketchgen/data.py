"""Deterministic synthetic sketch/image dataset.

Each class is a small stroke program in object coordinates (roughly [-1, 1]²,
x right, y down). An image renders the filled object at a sampled pose over a
cluttered background; its sketches re-draw the same strokes with per-sketcher
jitter, detail-stroke dropout and varying abstraction. Every sample draws
from its own RNG stream seeded by ``(seed, sample_id)``.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import netpbm

# ---------------------------------------------------------------------------
# Stroke programs
# ---------------------------------------------------------------------------


@dataclass
class Stroke:
    points: np.ndarray
    closed: bool = False
    fill: bool = False
    optional: bool = False  # detail a sketcher may leave out
    curve: bool = False  # sampled from a smooth curve; simplifiable


def _ellipse(cx, cy, rx, ry, n=24, start=0.0, stop=2 * math.pi):
    t = np.linspace(start, stop, n, endpoint=not math.isclose(stop - start, 2 * math.pi))
    return np.stack([cx + rx * np.cos(t), cy + ry * np.sin(t)], axis=1)


def _poly(*pts):
    return np.asarray(pts, dtype=np.float64)


def _mug():
    return [
        Stroke(_poly((-0.6, -0.7), (0.45, -0.7), (0.4, 0.8), (-0.55, 0.8)), closed=True, fill=True),
        Stroke(_ellipse(0.48, 0.02, 0.4, 0.36, 12, -math.pi / 2, math.pi / 2), curve=True),
        Stroke(_ellipse(0.46, 0.02, 0.2, 0.18, 8, -math.pi / 2, math.pi / 2), curve=True, optional=True),
        Stroke(_poly((-0.25, -0.85), (-0.15, -1.0)), optional=True),
        Stroke(_poly((0.05, -0.85), (0.15, -1.0)), optional=True),
    ]


def _boat():
    return [
        Stroke(_poly((-0.95, 0.3), (0.95, 0.3), (0.6, 0.72), (-0.6, 0.72)), closed=True, fill=True),
        Stroke(_poly((-0.05, 0.3), (-0.05, -0.95))),
        Stroke(_poly((0.02, -0.85), (0.02, 0.2), (0.75, 0.2)), closed=True, fill=True),
        Stroke(_poly((-0.05, -0.95), (-0.4, -0.82), (-0.05, -0.7)), optional=True),
        Stroke(_poly((-0.9, 0.9), (-0.5, 0.82), (-0.1, 0.9), (0.3, 0.82), (0.7, 0.9)), optional=True),
    ]


def _house():
    return [
        Stroke(_poly((-0.7, -0.1), (0.7, -0.1), (0.7, 0.9), (-0.7, 0.9)), closed=True, fill=True),
        Stroke(_poly((-0.88, -0.1), (0.0, -0.9), (0.88, -0.1)), closed=True, fill=True),
        Stroke(_poly((-0.2, 0.9), (-0.2, 0.35), (0.2, 0.35), (0.2, 0.9))),
        Stroke(_poly((0.35, 0.1), (0.6, 0.1), (0.6, 0.3), (0.35, 0.3)), closed=True, optional=True),
        Stroke(_poly((0.45, -0.5), (0.45, -0.8), (0.65, -0.8), (0.65, -0.32)), optional=True),
    ]


def _fish():
    return [
        Stroke(_ellipse(-0.15, 0.0, 0.65, 0.4, 24), closed=True, fill=True, curve=True),
        Stroke(_poly((0.45, 0.0), (0.95, -0.45), (0.95, 0.45)), closed=True, fill=True),
        Stroke(_ellipse(-0.5, -0.08, 0.07, 0.07, 6), closed=True, optional=True, curve=True),
        Stroke(_poly((-0.2, -0.38), (0.05, -0.65), (0.2, -0.35)), optional=True),
        Stroke(_poly((-0.1, 0.15), (0.1, 0.05), (-0.1, -0.05)), optional=True),
    ]


def _tree():
    crown = _ellipse(0.0, -0.3, 0.62, 0.6, 28)
    wobble = 1.0 + 0.08 * np.cos(7 * np.linspace(0, 2 * math.pi, len(crown), endpoint=False))
    crown = np.array([0.0, -0.3]) + (crown - np.array([0.0, -0.3])) * wobble[:, None]
    return [
        Stroke(_poly((-0.14, 0.25), (0.14, 0.25), (0.16, 0.95), (-0.16, 0.95)), closed=True, fill=True),
        Stroke(crown, closed=True, fill=True, curve=True),
        Stroke(_poly((0.0, 0.25), (0.0, -0.2), (0.25, -0.45)), optional=True),
        Stroke(_poly((0.0, -0.05), (-0.25, -0.35)), optional=True),
    ]


def _star():
    ang = -math.pi / 2 + np.arange(10) * math.pi / 5
    rad = np.where(np.arange(10) % 2 == 0, 0.98, 0.42)
    pts = np.stack([rad * np.cos(ang), rad * np.sin(ang)], axis=1)
    return [
        Stroke(pts, closed=True, fill=True),
        Stroke(_ellipse(0.0, 0.05, 0.12, 0.12, 6), closed=True, optional=True, curve=True),
    ]


def _arrow():
    return [
        Stroke(_poly((-0.95, -0.12), (0.3, -0.12), (0.3, 0.12), (-0.95, 0.12)), closed=True, fill=True),
        Stroke(_poly((0.3, -0.5), (0.97, 0.0), (0.3, 0.5)), closed=True, fill=True),
        Stroke(_poly((-0.95, -0.12), (-0.75, -0.45)), optional=True),
        Stroke(_poly((-0.95, 0.12), (-0.75, 0.45)), optional=True),
    ]


def _bird():
    return [
        Stroke(_ellipse(-0.05, 0.15, 0.55, 0.33, 22), closed=True, fill=True, curve=True),
        Stroke(_ellipse(0.5, -0.3, 0.24, 0.22, 14), closed=True, fill=True, curve=True),
        Stroke(_poly((0.72, -0.36), (0.98, -0.28), (0.72, -0.2)), closed=True, fill=True),
        Stroke(_poly((-0.55, 0.05), (-0.98, -0.3), (-0.95, 0.3)), closed=True, fill=True),
        Stroke(_poly((-0.35, 0.05), (0.0, -0.45), (0.25, 0.05)), optional=True),
        Stroke(_poly((-0.1, 0.45), (-0.15, 0.85)), optional=True),
        Stroke(_poly((0.15, 0.45), (0.2, 0.85)), optional=True),
    ]


CLASS_LIBRARY = {
    "mug": _mug,
    "boat": _boat,
    "house": _house,
    "fish": _fish,
    "tree": _tree,
    "star": _star,
    "arrow": _arrow,
    "bird": _bird,
}
CLASS_NAMES = list(CLASS_LIBRARY)


def _segments(strokes: list[Stroke]) -> np.ndarray:
    """All line segments as an [M, 2, 2] array."""
    segs = []
    for s in strokes:
        pts = s.points
        if s.closed:
            pts = np.vstack([pts, pts[:1]])
        segs.append(np.stack([pts[:-1], pts[1:]], axis=1))
    return np.concatenate(segs, axis=0) if segs else np.zeros((0, 2, 2))


def stroke_centroid(strokes: list[Stroke]) -> np.ndarray:
    """Arc-length weighted centroid of the stroke set."""
    segs = _segments(strokes)
    lengths = np.linalg.norm(segs[:, 1] - segs[:, 0], axis=1)
    mids = segs.mean(axis=1)
    return (mids * lengths[:, None]).sum(axis=0) / lengths.sum()


def class_program(name: str) -> list[Stroke]:
    """Stroke program for ``name``, recentred so the full stroke set's centroid is the origin."""
    strokes = CLASS_LIBRARY[name]()
    c = stroke_centroid(strokes)
    return [Stroke(s.points - c, s.closed, s.fill, s.optional, s.curve) for s in strokes]


# ---------------------------------------------------------------------------
# Rasterization
# ---------------------------------------------------------------------------


def _pixel_grid(size: int, supersample: int = 1) -> tuple[np.ndarray, np.ndarray]:
    n = size * supersample
    coords = (np.arange(n) + 0.5) / supersample
    return np.meshgrid(coords, coords)  # x, y in pixel units


def render_strokes(segments: np.ndarray, size: int, half_width: float = 0.55) -> np.ndarray:
    """Anti-aliased polyline rendering; ``segments`` in pixel coordinates."""
    xx, yy = _pixel_grid(size)
    p = np.stack([xx.ravel(), yy.ravel()], axis=1)  # [P, 2]
    if len(segments) == 0:
        return np.zeros((size, size))
    a, b = segments[:, 0], segments[:, 1]  # [M, 2]
    ab = b - a
    denom = np.maximum((ab * ab).sum(axis=1), 1e-12)
    ap = p[:, None, :] - a[None, :, :]  # [P, M, 2]
    t = np.clip((ap * ab[None]).sum(axis=2) / denom[None], 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    d = np.sqrt(((p[:, None, :] - closest) ** 2).sum(axis=2)).min(axis=1)
    return np.clip(half_width + 0.5 - d, 0.0, 1.0).reshape(size, size)


def fill_polygon(poly: np.ndarray, size: int, supersample: int = 3) -> np.ndarray:
    """Even-odd polygon coverage in [0, 1] with box-filter anti-aliasing."""
    xx, yy = _pixel_grid(size, supersample)
    inside = np.zeros(xx.shape, dtype=bool)
    x0, y0 = poly[:, 0], poly[:, 1]
    x1, y1 = np.roll(x0, -1), np.roll(y0, -1)
    for ax, ay, bx, by in zip(x0, y0, x1, y1):
        if ay == by:
            continue
        crosses = (ay > yy) != (by > yy)
        xint = ax + (yy - ay) * (bx - ax) / (by - ay)
        inside ^= crosses & (xx < xint)
    cov = inside.reshape(size, supersample, size, supersample).mean(axis=(1, 3))
    return cov


# ---------------------------------------------------------------------------
# Samples
# ---------------------------------------------------------------------------


@dataclass
class Pose:
    x: float  # centroid column, pixels
    y: float  # centroid row, pixels
    scale: float  # object half-extent, pixels
    rotation: float  # degrees
    flip: bool  # mirrored left-right

    def to_dict(self) -> dict:
        return {"x": self.x, "y": self.y, "scale": self.scale, "rotation": self.rotation, "flip": self.flip}

    def transform(self, pts: np.ndarray) -> np.ndarray:
        pts = pts.copy()
        if self.flip:
            pts[:, 0] = -pts[:, 0]
        th = math.radians(self.rotation)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        return pts @ rot.T * self.scale + np.array([self.x, self.y])


@dataclass
class SketchSample:
    image: np.ndarray  # HxWx3 in [0, 1]
    label: int
    sketches: list  # K arrays HxW in [0, 1], strokes = 1
    sample_id: int
    pose: Pose
    class_name: str = ""


@dataclass
class SketcherStyle:
    """Per-sketcher deviation from the true object outline."""

    offset: tuple[float, float]
    scale: float
    rotation: float
    point_noise: float
    keep_optional: np.ndarray
    simplify: bool
    half_width: float


def _draw_style(rng: np.random.Generator, n_optional: int) -> SketcherStyle:
    return SketcherStyle(
        offset=(float(rng.uniform(-0.6, 0.6)), float(rng.uniform(-0.6, 0.6))),
        scale=float(rng.uniform(0.92, 1.08)),
        rotation=float(rng.uniform(-6.0, 6.0)),
        point_noise=float(rng.uniform(0.02, 0.06)),
        keep_optional=rng.random(n_optional) < 0.5,
        simplify=bool(rng.random() < 0.35),
        half_width=float(rng.uniform(0.45, 0.7)),
    )


def _sketch_strokes(program: list[Stroke], style: SketcherStyle, rng: np.random.Generator) -> list[Stroke]:
    out, opt_i = [], 0
    for s in program:
        if s.optional:
            keep = style.keep_optional[opt_i]
            opt_i += 1
            if not keep:
                continue
        pts = s.points
        if style.simplify and s.curve and len(pts) > 8:
            pts = pts[:: max(2, len(pts) // 6)]
        pts = pts + rng.normal(0.0, style.point_noise, pts.shape)
        out.append(Stroke(pts, s.closed, s.fill, s.optional, s.curve))
    return out


def render_sketch(program: list[Stroke], pose: Pose, size: int, style: SketcherStyle,
                  rng: np.random.Generator) -> np.ndarray:
    strokes = _sketch_strokes(program, style, rng)
    spose = Pose(
        x=pose.x + style.offset[0],
        y=pose.y + style.offset[1],
        scale=pose.scale * style.scale,
        rotation=pose.rotation + style.rotation,
        flip=pose.flip,
    )
    segs = _segments([Stroke(spose.transform(s.points), s.closed) for s in strokes])
    return render_strokes(segs, size, style.half_width)


def _smooth_noise(rng: np.random.Generator, size: int, cells: int) -> np.ndarray:
    coarse = rng.random((cells, cells))
    return ndimage.zoom(coarse, size / cells, order=1, mode="nearest")[:size, :size]


def _random_color(rng: np.random.Generator, lo=0.0, hi=1.0) -> np.ndarray:
    return rng.uniform(lo, hi, 3)


def render_image(program: list[Stroke], pose: Pose, size: int, rng: np.random.Generator) -> np.ndarray:
    # background: two-scale noise texture in a random tint
    base = _random_color(rng, 0.2, 0.8)
    tex = 0.6 * _smooth_noise(rng, size, 4) + 0.4 * _smooth_noise(rng, size, 8) - 0.5
    img = np.clip(base[None, None, :] + 0.35 * tex[..., None] * _random_color(rng, 0.5, 1.0), 0, 1)

    # distractor blobs
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    for _ in range(int(rng.integers(2, 5))):
        cx, cy = rng.uniform(0, size, 2)
        rx, ry = rng.uniform(0.08, 0.22, 2) * size
        mask = np.clip(1.5 - np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2) * 1.5, 0, 1)
        img = img * (1 - mask[..., None]) + mask[..., None] * _random_color(rng)[None, None]

    # object parts: filled regions with shading, then thin parts as dark lines
    body = _random_color(rng, 0.05, 0.95)
    for s in program:
        if s.fill:
            cov = fill_polygon(pose.transform(s.points), size)
            shade = np.clip(body + rng.normal(0, 0.12, 3), 0, 1)
            grain = 1.0 + 0.08 * (_smooth_noise(rng, size, 8) - 0.5)
            img = img * (1 - cov[..., None]) + cov[..., None] * np.clip(shade[None, None] * grain[..., None], 0, 1)
    ink = np.clip(body * 0.35, 0, 1)
    thin = [Stroke(pose.transform(s.points), s.closed) for s in program if not s.fill]
    if thin:
        cov = render_strokes(_segments(thin), size, 0.5)
        img = img * (1 - cov[..., None]) + cov[..., None] * ink[None, None]
    img = img + rng.normal(0, 0.02, img.shape)
    return np.clip(img, 0.0, 1.0)


def _draw_pose(rng: np.random.Generator, size: int) -> Pose:
    return Pose(
        x=float(size / 2 + rng.uniform(-0.06, 0.06) * size),
        y=float(size / 2 + rng.uniform(-0.06, 0.06) * size),
        scale=float(rng.uniform(0.34, 0.41) * size),
        rotation=float(rng.uniform(-15.0, 15.0)),
        flip=bool(rng.random() < 0.5),
    )


def make_sample(seed: int, sample_id: int, label: int, sketches_per_image: int, size: int) -> SketchSample:
    rng = np.random.default_rng([seed, sample_id])
    name = CLASS_NAMES[label]
    program = class_program(name)
    pose = _draw_pose(rng, size)
    image = render_image(program, pose, size, rng)
    n_opt = sum(s.optional for s in program)
    sketches = []
    for _ in range(sketches_per_image):
        style = _draw_style(rng, n_opt)
        sketches.append(render_sketch(program, pose, size, style, rng))
    return SketchSample(image, label, sketches, sample_id, pose, name)


def generate_dataset(seed: int, num_classes: int, images_per_class: int, sketches_per_image: int,
                     size: int = 32) -> list[SketchSample]:
    if not 1 <= num_classes <= len(CLASS_LIBRARY):
        raise ValueError(f"num_classes must be in [1, {len(CLASS_LIBRARY)}], got {num_classes}")
    if images_per_class < 1 or sketches_per_image < 1:
        raise ValueError("images_per_class and sketches_per_image must be >= 1")
    if size < 8:
        raise ValueError("size must be >= 8")
    samples = []
    for label in range(num_classes):
        for i in range(images_per_class):
            sid = label * images_per_class + i
            samples.append(make_sample(seed, sid, label, sketches_per_image, size))
    return samples


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------


@dataclass
class DatasetSplit:
    train: list[int]
    test: list[int]

    def to_dict(self) -> dict:
        return {"train": list(self.train), "test": list(self.test)}


def split_dataset(samples: list[SketchSample], ratio: float, seed: int) -> DatasetSplit:
    """Stratified split at image granularity."""
    if not 0.0 < ratio < 1.0:
        raise ValueError(f"ratio must be in (0, 1), got {ratio}")
    by_class: dict[int, list[int]] = {}
    for s in samples:
        by_class.setdefault(s.label, []).append(s.sample_id)
    train, test = [], []
    for label in sorted(by_class):
        ids = sorted(by_class[label])
        if len(ids) < 2:
            raise ValueError(f"class {label} has {len(ids)} image(s); at least 2 are needed to split")
        rng = np.random.default_rng([seed, label])
        ids = [ids[i] for i in rng.permutation(len(ids))]
        n_train = min(max(int(round(ratio * len(ids))), 1), len(ids) - 1)
        train.extend(sorted(ids[:n_train]))
        test.extend(sorted(ids[n_train:]))
    return DatasetSplit(sorted(train), sorted(test))


def split_items(n: int, ratio: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Random (unstratified) split of ``n`` items, e.g. sketches for classifier training."""
    perm = np.random.default_rng(seed).permutation(n)
    k = int(round(ratio * n))
    return np.sort(perm[:k]), np.sort(perm[k:])


# ---------------------------------------------------------------------------
# Augmentation
# ---------------------------------------------------------------------------


@dataclass
class AugmentSpec:
    flip: bool = True
    rotation_deg: float = 10.0
    translate_frac: float = 18.0 / 224.0
    scale_frac: float = 0.1
    shear_deg: float = 10.0
    jitter: float = 0.1

    @classmethod
    def none(cls) -> "AugmentSpec":
        return cls(flip=False, rotation_deg=0.0, translate_frac=0.0, scale_frac=0.0, shear_deg=0.0, jitter=0.0)


def affine_sketch(sketch: np.ndarray, rotation: float = 0.0, translate: tuple[float, float] = (0.0, 0.0),
                  scale: float = 1.0, shear: float = 0.0, flip: bool = False) -> np.ndarray:
    """Affine warp about the image centre with bilinear resampling and zero fill.

    ``translate`` is (dx, dy) in pixels; angles in degrees.
    """
    img = sketch[:, ::-1] if flip else sketch
    h, w = img.shape
    th, sh = math.radians(rotation), math.radians(shear)
    # forward map in (x, y): rotation @ shear @ scale
    rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    shr = np.array([[1.0, math.tan(sh)], [0.0, 1.0]])
    fwd = rot @ shr * scale
    inv = np.linalg.inv(fwd)
    # ndimage works in (row, col) = (y, x)
    swap = np.array([[0, 1], [1, 0]])
    m = swap @ inv @ swap
    centre = np.array([(h - 1) / 2.0, (w - 1) / 2.0])
    t = np.array([translate[1], translate[0]])
    offset = centre - m @ (centre + t)
    out = ndimage.affine_transform(img, m, offset=offset, order=1, mode="constant", cval=0.0)
    return np.clip(out, 0.0, 1.0)


def augment_sketch(sketch: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    """Random flip, rotation, translation, scale and shear drawn from ``spec``."""
    if sketch.ndim != 2:
        raise ValueError(f"augment_sketch expects a single-channel HxW array, got {sketch.shape}")
    w = sketch.shape[1]
    flip = bool(rng.random() < 0.5) and spec.flip
    rot = rng.uniform(-1, 1) * spec.rotation_deg
    tx, ty = rng.uniform(-1, 1, 2) * spec.translate_frac * w
    sc = 1.0 + rng.uniform(-1, 1) * spec.scale_frac
    sh = rng.uniform(-1, 1) * spec.shear_deg
    return affine_sketch(sketch, rot, (tx, ty), sc, sh, flip)


def color_jitter(image: np.ndarray, brightness: float, contrast: float, saturation: float) -> np.ndarray:
    img = image * brightness
    img = img.mean() + contrast * (img - img.mean())
    gray = (img @ np.array([0.299, 0.587, 0.114]))[..., None]
    img = gray + saturation * (img - gray)
    return np.clip(img, 0.0, 1.0)


def augment_image(image: np.ndarray, spec: AugmentSpec, rng: np.random.Generator, flip: bool = False) -> np.ndarray:
    """Colour jitter with factors in [1 - j, 1 + j]; ``flip`` mirrors left-right.

    The flip coin is drawn by the caller so the paired sketch can share it.
    """
    b, c, s = 1.0 + rng.uniform(-1, 1, 3) * spec.jitter
    out = color_jitter(image, b, c, s)
    return out[:, ::-1] if flip else out


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------

MANIFEST = "manifest.json"


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=True) + "\n"


def export_dataset(samples: list[SketchSample], split: DatasetSplit, out_dir: str | os.PathLike,
                   extra: dict | None = None) -> Path:
    """Write PPM images, inverted PGM sketches (dark strokes on white) and a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    test = set(split.test)
    entries = []
    for s in samples:
        cls_dir = out / s.class_name
        cls_dir.mkdir(exist_ok=True)
        img_rel = f"{s.class_name}/{s.sample_id:05d}.ppm"
        netpbm.write_ppm(out / img_rel, s.image)
        sk_rel = []
        for k, sk in enumerate(s.sketches):
            rel = f"{s.class_name}/{s.sample_id:05d}_{k}.pgm"
            netpbm.write_pgm(out / rel, 1.0 - sk)
            sk_rel.append(rel)
        entries.append({
            "id": s.sample_id,
            "label": s.label,
            "class": s.class_name,
            "split": "test" if s.sample_id in test else "train",
            "pose": s.pose.to_dict(),
            "image": img_rel,
            "sketches": sk_rel,
        })
    manifest = {"classes": CLASS_NAMES[: 1 + max(s.label for s in samples)], "samples": entries}
    if extra:
        manifest.update(extra)
    (out / MANIFEST).write_text(canonical_json(manifest))
    return out / MANIFEST


def load_dataset(data_dir: str | os.PathLike) -> tuple[list[SketchSample], DatasetSplit, dict]:
    root = Path(data_dir)
    manifest = json.loads((root / MANIFEST).read_text())
    samples, train, test = [], [], []
    for e in manifest["samples"]:
        image = netpbm.read(root / e["image"]).astype(np.float64) / 255.0
        sketches = [1.0 - netpbm.read(root / p).astype(np.float64) / 255.0 for p in e["sketches"]]
        samples.append(SketchSample(image, e["label"], sketches, e["id"], Pose(**e["pose"]), e["class"]))
        (test if e["split"] == "test" else train).append(e["id"])
    return samples, DatasetSplit(sorted(train), sorted(test)), manifest


def stack_images(samples: list[SketchSample]) -> np.ndarray:
    """[N, 3, H, W] float32."""
    return np.stack([s.image.transpose(2, 0, 1) for s in samples]).astype(np.float32)


def all_sketches(samples: list[SketchSample]) -> tuple[np.ndarray, np.ndarray]:
    """Every sketch as [M, 1, H, W] float32 plus labels."""
    sk = [k for s in samples for k in s.sketches]
    labels = [s.label for s in samples for _ in s.sketches]
    return np.stack(sk)[:, None].astype(np.float32), np.asarray(labels)
