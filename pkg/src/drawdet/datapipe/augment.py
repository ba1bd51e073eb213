"""Box-consistent augmentation.

Every geometric op moves labels through the same affine map it applies to
the raster; boxes left with under 25% of their area visible are dropped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from ..geometry import Box, Klass
from . import imops
from .core import MIN_VISIBLE, AnnotatedImage, Labels, child_rng, transport_labels

_WEAK_KEY, _STRONG_KEY, _POLICY_KEY, _MOSAIC_KEY = 11, 12, 13, 14
NO_AUG_EPOCHS = 15
CROP_RETRIES = 5


@dataclass(frozen=True)
class AugmentationPolicy:
    enabled: bool = True
    hflip_prob: float = 0.5
    vflip_prob: float = 0.2
    color_shift_range: tuple[float, float] = (-20.0, 20.0)
    shear_range: float = 10.0
    mosaic_prob: float = 0.5
    gaussian_noise_sigma: float = 0.03
    crop_scale_range: tuple[float, float] = (0.6, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "color_shift_range", tuple(float(v) for v in self.color_shift_range))
        object.__setattr__(self, "crop_scale_range", tuple(float(v) for v in self.crop_scale_range))
        for name in ("hflip_prob", "vflip_prob", "mosaic_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        lo, hi = self.color_shift_range
        if not -180 <= lo <= hi <= 180:
            raise ValueError(f"bad color_shift_range {self.color_shift_range}")
        lo, hi = self.crop_scale_range
        if not 0 < lo <= hi <= 1:
            raise ValueError(f"bad crop_scale_range {self.crop_scale_range}")
        if self.shear_range < 0 or self.gaussian_noise_sigma < 0:
            raise ValueError("shear_range and gaussian_noise_sigma must be non-negative")

    def disabled(self) -> "AugmentationPolicy":
        return replace(self, enabled=False)


def schedule_augmentation(epoch: int, total_epochs: int, policy: AugmentationPolicy,
                          window: int = NO_AUG_EPOCHS) -> AugmentationPolicy:
    """Disable augmentation during the first and last ``window`` epochs."""
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    if epoch < window or epoch >= total_epochs - window:
        return policy.disabled()
    return policy


def _full(img):
    return (0.0, 0.0, float(img.shape[1]), float(img.shape[0]))


def hflip(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]]):
    w = img.shape[1]
    m = np.array([[-1.0, 0.0, w], [0.0, 1.0, 0.0]])
    return img[:, ::-1].copy(), transport_labels(labels, m, _full(img), 0.0)


def vflip(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]]):
    h = img.shape[0]
    m = np.array([[1.0, 0.0, 0.0], [0.0, -1.0, h]])
    return img[::-1].copy(), transport_labels(labels, m, _full(img), 0.0)


def shear_matrix(degrees: float, height: int) -> np.ndarray:
    t = math.tan(math.radians(degrees))
    return np.array([[1.0, t, -t * height / 2], [0.0, 1.0, 0.0]])


def shear(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]], degrees: float):
    """Horizontal shear about the image's middle row."""
    h, w = img.shape[:2]
    m = shear_matrix(degrees, h)
    return imops.warp_affine(img, m, w, h), transport_labels(labels, m, _full(img))


def gaussian_noise(img: np.ndarray, sigma: float, rng: np.random.Generator) -> np.ndarray:
    return np.clip(img + rng.normal(0.0, sigma, size=img.shape).astype(np.float32), 0.0, 1.0)


def crop(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]], x0: int, y0: int, width: int, height: int):
    """Cut the window ``[x0, x0+width) x [y0, y0+height)``; labels shift by ``(-x0, -y0)`` and are clipped."""
    if width <= 0 or height <= 0 or x0 < 0 or y0 < 0 or x0 + width > img.shape[1] or y0 + height > img.shape[0]:
        raise ValueError(f"crop window ({x0}, {y0}, {width}, {height}) outside image {img.shape[:2]}")
    m = np.array([[1.0, 0.0, -x0], [0.0, 1.0, -y0]])
    return (img[y0:y0 + height, x0:x0 + width].copy(),
            transport_labels(labels, m, (0.0, 0.0, float(width), float(height))))


def scale_labels(labels: Mapping[Klass, Sequence[Box]], sx: float, sy: float, width: int, height: int) -> Labels:
    m = np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0]])
    return transport_labels(labels, m, (0.0, 0.0, float(width), float(height)), 0.0)


def _count(labels):
    return sum(len(v) for v in labels.values())


def random_crop(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]], rng: np.random.Generator,
                scale_range=(0.6, 1.0)):
    """Square-aspect crop of a random area fraction, resized back to the input size.

    A crop that loses every label is redrawn up to five times; after that the
    whole image is kept.
    """
    h, w = img.shape[:2]
    had_labels = _count(labels) > 0
    for _ in range(CROP_RETRIES):
        frac = math.sqrt(rng.uniform(*scale_range))
        cw, ch = max(1, int(round(w * frac))), max(1, int(round(h * frac)))
        x0 = int(rng.integers(0, w - cw + 1))
        y0 = int(rng.integers(0, h - ch + 1))
        out, moved = crop(img, labels, x0, y0, cw, ch)
        if not had_labels or _count(moved) > 0:
            return imops.resize(out, w, h), scale_labels(moved, w / cw, h / ch, w, h)
    return img.copy(), {k: list(v) for k, v in labels.items()}


def mosaic(items: Sequence[AnnotatedImage], out_size: int, rng: np.random.Generator | None = None,
           center: tuple[int, int] | None = None, fill: float = 0.5) -> AnnotatedImage:
    """Four-image 2x2 composite around a split point.

    Each source is scaled so its longer side is ``out_size / 2`` and placed with
    one corner on the split point; anything beyond its quadrant is cut away.
    The split point is jittered uniformly over the middle half of each axis
    unless ``center`` is given.
    """
    if len(items) != 4:
        raise ValueError(f"mosaic needs exactly 4 images, got {len(items)}")
    if center is None:
        if rng is None:
            raise ValueError("mosaic needs an rng or an explicit center")
        lo, hi = out_size // 4, (3 * out_size) // 4
        center = (int(rng.integers(lo, hi + 1)), int(rng.integers(lo, hi + 1)))
    xc, yc = center
    canvas = np.full((out_size, out_size, 3), fill, dtype=np.float32)
    labels: Labels = {Klass.FACE: [], Klass.BODY: []}
    quads = [(0, 0, xc, yc), (xc, 0, out_size, yc), (0, yc, xc, out_size), (xc, yc, out_size, out_size)]
    for q, (item, (qx1, qy1, qx2, qy2)) in enumerate(zip(items, quads)):
        s = (out_size / 2) / max(item.height, item.width)
        sw, sh = max(1, int(round(item.width * s))), max(1, int(round(item.height * s)))
        sx, sy = sw / item.width, sh / item.height
        src = imops.resize(item.image, sw, sh)
        ox = xc - sw if q in (0, 2) else xc
        oy = yc - sh if q in (0, 1) else yc
        # paste the part of the scaled source that falls inside its quadrant
        px1, py1 = max(ox, qx1), max(oy, qy1)
        px2, py2 = min(ox + sw, qx2), min(oy + sh, qy2)
        if px2 > px1 and py2 > py1:
            canvas[py1:py2, px1:px2] = src[py1 - oy:py2 - oy, px1 - ox:px2 - ox]
        m = np.array([[sx, 0.0, ox], [0.0, sy, oy]])
        moved = transport_labels(item.labels(), m, (float(qx1), float(qy1), float(qx2), float(qy2)), MIN_VISIBLE)
        for k in labels:
            labels[k].extend(moved[k])
    ids = "+".join(i.id for i in items)
    return AnnotatedImage(canvas, labels[Klass.FACE], labels[Klass.BODY], items[0].source, f"mosaic({ids})")


def apply_policy(item: AnnotatedImage, policy: AugmentationPolicy, seed: int,
                 pool: Sequence[AnnotatedImage] | None = None) -> AnnotatedImage:
    """Stage-1/3 training augmentation: mosaic, flips, colour shift and shear."""
    if not policy.enabled:
        return item
    rng = child_rng(seed, _POLICY_KEY)
    if pool and rng.random() < policy.mosaic_prob:
        others = [pool[int(i)] for i in rng.integers(0, len(pool), size=3)]
        item = mosaic([item, *others], item.width, child_rng(seed, _MOSAIC_KEY))
    img, labels = item.image, item.labels()
    if rng.random() < policy.hflip_prob:
        img, labels = hflip(img, labels)
    if rng.random() < policy.vflip_prob:
        img, labels = vflip(img, labels)
    lo, hi = policy.color_shift_range
    img = imops.rotate_hue(img, rng.uniform(lo, hi))
    if policy.shear_range > 0:
        img, labels = shear(img, labels, rng.uniform(-policy.shear_range, policy.shear_range))
    return item.with_content(img.astype(np.float32), labels)


def augment_weak(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]], seed: int):
    """Teacher view: horizontal flip with probability 0.5."""
    if child_rng(seed, _WEAK_KEY).random() < 0.5:
        return hflip(img, labels)
    return img, {k: list(v) for k, v in labels.items()}


def strong_extras(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]], seed: int,
                  policy: AugmentationPolicy = AugmentationPolicy()):
    """Student-only ops applied on top of the weak view: noise, colour shift, random crop."""
    rng = child_rng(seed, _STRONG_KEY)
    out = gaussian_noise(img, policy.gaussian_noise_sigma, rng)
    out = imops.rotate_hue(out, rng.uniform(*policy.color_shift_range))
    out, labels = random_crop(out, labels, rng, policy.crop_scale_range)
    return out.astype(np.float32), labels


def augment_strong(img: np.ndarray, labels: Mapping[Klass, Sequence[Box]], seed: int,
                   policy: AugmentationPolicy = AugmentationPolicy()):
    """Student view: the weak view for the same seed, then noise, colour shift and crop."""
    img, labels = augment_weak(img, labels, seed)
    return strong_extras(img, labels, seed, policy)
