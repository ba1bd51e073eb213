"""Parametric desk-scale corpus: stick-free "people" (ellipse head over a
rounded torso) rendered in a shaded natural look or in flat drawing looks.

Boxes come straight from the scene graph; nothing is measured from pixels.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import cv2
import numpy as np

from ..geometry import Box
from .core import AnnotatedImage, child_rng, quantize

DRAWING_STYLES = ("manga", "western", "watercolor", "clipart")
SPLITS = ("natural_train", "drawing_unlabeled", "drawing_labeled_train", "drawing_dev", "drawing_test")
_SPLIT_PREFIX = {"natural_train": "nat", "drawing_unlabeled": "dunl", "drawing_labeled_train": "dlab",
                 "drawing_dev": "ddev", "drawing_test": "dtest"}
_SKIN = (np.array([0.96, 0.80, 0.68]), np.array([0.45, 0.30, 0.22]))


@dataclass(frozen=True)
class CorpusSizes:
    natural_train: int = 400
    drawing_unlabeled: int = 300
    drawing_labeled_train: int = 512
    drawing_dev: int = 64
    drawing_test: int = 128
    image_size: int = 96

    def __post_init__(self):
        for name in SPLITS:
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.image_size < 48:
            raise ValueError("image_size must be at least 48 px")


@dataclass
class Figure:
    head: tuple[float, float, float, float]   # cx, cy, rx, ry
    torso: tuple[float, float, float, float]  # x1, y1, x2, y2 (rounded rectangle)

    @property
    def face_box(self) -> Box:
        cx, cy, rx, ry = self.head
        return Box(cx, cy, 2 * rx, 2 * ry)

    @property
    def body_box(self) -> Box:
        cx, cy, rx, ry = self.head
        x1, y1, x2, y2 = self.torso
        return Box.from_corner(min(x1, cx - rx), min(y1, cy - ry), max(x2, cx + rx), max(y2, cy + ry))


@dataclass
class Scene:
    size: int
    figures: list[Figure] = field(default_factory=list)


def sample_scene(rng: np.random.Generator, size: int, max_figures: int = 3) -> Scene:
    scale = size / 96.0
    figures: list[Figure] = []
    target = int(rng.integers(1, max_figures + 1))
    for _ in range(40):
        if len(figures) == target:
            break
        height = rng.uniform(28, 72) * scale
        ry = 0.17 * height
        rx = ry * rng.uniform(0.8, 1.0)
        tw = rng.uniform(0.45, 0.65) * height
        bw = max(tw, 2 * rx)
        x1 = rng.uniform(1, size - bw - 1)
        y1 = rng.uniform(1, size - height - 1)
        cx = x1 + bw / 2
        fig = Figure(head=(cx, y1 + ry, rx, ry),
                     torso=(cx - tw / 2, y1 + 1.7 * ry, cx + tw / 2, y1 + height))
        b = fig.body_box.to_corner()
        if all(b[2] + 2 < o[0] or o[2] + 2 < b[0] or b[3] + 2 < o[1] or o[3] + 2 < b[1]
               for o in (f.body_box.to_corner() for f in figures)):
            figures.append(fig)
    return Scene(size, figures)


def _grid(size):
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float32) + 0.5
    return xx, yy


def ellipse_sdf(xx, yy, cx, cy, rx, ry):
    """Approximate signed distance (px) to an ellipse outline; negative inside."""
    rho = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return (rho - 1.0) * min(rx, ry)


def rounded_rect_sdf(xx, yy, x1, y1, x2, y2, radius):
    cx, cy = (x1 + x2) / 2, (y1 + y2) / 2
    hx, hy = (x2 - x1) / 2 - radius, (y2 - y1) / 2 - radius
    qx, qy = np.abs(xx - cx) - hx, np.abs(yy - cy) - hy
    outside = np.hypot(np.maximum(qx, 0), np.maximum(qy, 0))
    inside = np.minimum(np.maximum(qx, qy), 0)
    return outside + inside - radius


def scene_masks(scene: Scene) -> list[dict[str, np.ndarray]]:
    """Filled head / torso masks per figure, for self-checking rendered geometry."""
    xx, yy = _grid(scene.size)
    out = []
    for f in scene.figures:
        t = f.torso
        out.append({"head": ellipse_sdf(xx, yy, *f.head) <= 0,
                    "torso": rounded_rect_sdf(xx, yy, *t, radius=0.3 * (t[2] - t[0])) <= 0})
    return out


def _smooth_noise(rng, size, cells, channels=3):
    small = rng.uniform(0, 1, size=(cells, cells, channels)).astype(np.float32)
    return cv2.resize(small, (size, size), interpolation=cv2.INTER_CUBIC).reshape(size, size, channels)


def _paint(img, mask, color):
    img[mask] = color


def _render_natural(scene: Scene, rng) -> np.ndarray:
    s = scene.size
    xx, yy = _grid(s)
    base = rng.uniform(0.25, 0.7, size=3)
    img = np.clip(base + 0.35 * (_smooth_noise(rng, s, int(rng.integers(3, 7))) - 0.5), 0, 1)
    img = img * (1 - 0.25 * (yy / s))[..., None]
    img += rng.normal(0, 0.05, size=img.shape).astype(np.float32)
    for _ in range(int(rng.integers(1, 4))):  # clutter
        cx, cy = rng.uniform(0, s, size=2)
        r = rng.uniform(4, 14) * s / 96
        m = ellipse_sdf(xx, yy, cx, cy, r, r * rng.uniform(0.5, 1.5)) <= 0
        shade = 1 - 0.4 * np.clip(((xx - cx) + (yy - cy)) / (2 * r) + 0.5, 0, 1)
        img[m] = (rng.uniform(0.1, 0.9, size=3) * shade[m][:, None])
    for f in scene.figures:
        x1, y1, x2, y2 = f.torso
        tm = rounded_rect_sdf(xx, yy, x1, y1, x2, y2, 0.3 * (x2 - x1)) <= 0
        cloth = rng.uniform(0.1, 0.9, size=3)
        shade = 1 - 0.45 * np.abs((xx - (x1 + x2) / 2) / ((x2 - x1) / 2))
        img[tm] = cloth * np.clip(shade[tm], 0.3, 1)[:, None]
        cx, cy, rx, ry = f.head
        hm = ellipse_sdf(xx, yy, cx, cy, rx, ry) <= 0
        skin = _SKIN[0] + rng.uniform() * (_SKIN[1] - _SKIN[0])
        d = np.sqrt(((xx - cx + 0.3 * rx) / rx) ** 2 + ((yy - cy + 0.3 * ry) / ry) ** 2)
        img[hm] = skin * np.clip(1.05 - 0.35 * d[hm], 0.4, 1)[:, None]
        if rng.random() < 0.8:
            hair = hm & (yy < cy - 0.35 * ry)
            img[hair] = rng.uniform(0.05, 0.45) * np.array([1.0, 0.8, 0.6])
        _face_features(img, xx, yy, f, dark=(0.1, 0.07, 0.05))
    img = cv2.GaussianBlur(img.astype(np.float32), (3, 3), 0.6)
    img += rng.normal(0, 0.02, size=img.shape).astype(np.float32)
    return img


def _face_features(img, xx, yy, f, dark):
    cx, cy, rx, ry = f.head
    er = max(0.13 * rx, 0.7)
    for sx in (-1, 1):
        _paint(img, ellipse_sdf(xx, yy, cx + sx * 0.38 * rx, cy - 0.02 * ry, er, er * 1.2) <= 0, dark)
    mouth = (np.abs(yy - (cy + 0.45 * ry)) < max(0.06 * ry, 0.5)) & (np.abs(xx - cx) < 0.3 * rx)
    _paint(img, mouth, dark)


def _render_drawing(scene: Scene, rng, style: str) -> np.ndarray:
    s = scene.size
    xx, yy = _grid(s)
    ink = np.array([0.05, 0.05, 0.05]) if style != "watercolor" else np.array([0.35, 0.25, 0.2])
    thick = {"manga": 1.6, "western": 1.8, "watercolor": 0.9, "clipart": 1.2}[style] * s / 96
    outline = not (style == "clipart" and rng.random() < 0.4)

    def color(light=False):
        if style == "manga":
            v = rng.choice([0.98, 0.75, 0.5, 0.2]) if not light else 0.98
            return np.array([v, v, v])
        if style == "watercolor":
            return 0.55 + 0.45 * rng.uniform(0, 1, size=3)
        c = rng.uniform(0, 1, size=3)
        c[rng.integers(3)] = 1.0 if style != "clipart" else rng.uniform(0.8, 1.0)
        return c

    if style == "manga":
        img = np.full((s, s, 3), 0.98, dtype=np.float32)
        if rng.random() < 0.6:  # screentone patch
            cell = 4
            dots = (np.hypot((xx % cell) - cell / 2, (yy % cell) - cell / 2) < 1.0) & (
                _smooth_noise(rng, s, 3, 1)[..., 0] > 0.5)
            img[dots] = 0.3
    elif style == "watercolor":
        img = np.clip(0.8 + 0.3 * (_smooth_noise(rng, s, 5) - 0.5), 0, 1)
    elif style == "clipart":
        img = np.full((s, s, 3), rng.uniform(0.9, 1.0), dtype=np.float32)
    else:
        img = np.tile(color().astype(np.float32), (s, s, 1))
        split = rng.uniform(0.4, 0.8) * s
        img[yy > split] = color()
    # panel borders and speech bubbles
    if rng.random() < 0.5:
        pos = rng.uniform(0.15, 0.85) * s
        band = np.abs((xx if rng.random() < 0.5 else yy) - pos) < thick
        img[band] = ink
    for _ in range(int(rng.integers(0, 3))):
        cx, cy = rng.uniform(0, s, size=2)
        rx = rng.uniform(6, 16) * s / 96
        sdf = ellipse_sdf(xx, yy, cx, cy, rx, rx * rng.uniform(0.5, 0.8))
        img[sdf <= 0] = 0.98
        img[(sdf > 0) & (sdf <= thick)] = ink
    for f in scene.figures:
        x1, y1, x2, y2 = f.torso
        sdf = rounded_rect_sdf(xx, yy, x1, y1, x2, y2, 0.3 * (x2 - x1))
        img[sdf <= 0] = color()
        if outline:
            img[(sdf > -thick) & (sdf <= 0)] = ink
        cx, cy, rx, ry = f.head
        sdf = ellipse_sdf(xx, yy, cx, cy, rx, ry)
        skin = color(light=True) if style == "manga" or rng.random() < 0.4 else (
            _SKIN[0] + rng.uniform() * (_SKIN[1] - _SKIN[0]) if rng.random() < 0.5 else color())
        img[sdf <= 0] = skin
        if rng.random() < 0.7:
            hair = (sdf <= 0) & (yy < cy - 0.4 * ry)
            img[hair] = color() if style != "manga" else np.array([0.1, 0.1, 0.1])
        if outline:
            img[(sdf > -thick) & (sdf <= 0)] = ink
        _face_features(img, xx, yy, f, dark=ink)
    return img


def render_scene(scene: Scene, rng: np.random.Generator, look: str) -> np.ndarray:
    """Render ``scene`` in ``look`` = ``"natural"`` or one of :data:`DRAWING_STYLES`."""
    if look == "natural":
        img = _render_natural(scene, rng)
    elif look in DRAWING_STYLES:
        img = _render_drawing(scene, rng, look)
    else:
        raise ValueError(f"unknown look {look!r}")
    return quantize(img)


def make_image(seed: int, split_key: int, index: int, size: int, look: str | None, ident: str) -> AnnotatedImage:
    rng = child_rng(seed, split_key, index)
    scene = sample_scene(rng, size)
    if look is None:
        look = DRAWING_STYLES[int(rng.integers(len(DRAWING_STYLES)))]
    image = render_scene(scene, rng, look)
    source = "natural" if look == "natural" else "drawing"
    return AnnotatedImage(image, [f.face_box for f in scene.figures], [f.body_box for f in scene.figures],
                          source, ident, {"look": look, "scene": scene})


def generate_split(split: str, n: int, image_size: int, seed: int = 0) -> list[AnnotatedImage]:
    """The first ``n`` images of one split; identical to that split of :func:`generate_synthetic_corpus`."""
    key = SPLITS.index(split)
    look = "natural" if split == "natural_train" else None
    prefix = _SPLIT_PREFIX[split]
    return [make_image(seed, key, i, image_size, look, f"{prefix}-{i:05d}") for i in range(n)]


def generate_synthetic_corpus(sizes: CorpusSizes = CorpusSizes(), seed: int = 0) -> dict[str, list[AnnotatedImage]]:
    """All five splits.  Every image is a pure function of (seed, split, index)."""
    return {split: generate_split(split, getattr(sizes, split), sizes.image_size, seed) for split in SPLITS}
