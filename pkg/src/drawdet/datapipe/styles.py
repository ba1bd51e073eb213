"""Pluggable style bank with per-image random mixing.

Eleven procedural stand-ins occupy the cartoonisation slots; a
:class:`PrecomputedStyle` plugs in rasters rendered offline by any
style-transfer model.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import ndimage

from . import imops
from .core import child_rng

STYLE_SLOTS = ("hayao", "shinkai", "hosoda", "paprika", "van_gogh", "monet",
               "cezanne", "miyazaki", "as", "kh", "whitebox")
TOP5_SLOTS = ("whitebox", "hosoda", "kh", "hayao", "shinkai")
MODES = ("single", "all", "top_k", "none")
_PICK_KEY = 0x57A1E


def _random_palette(rng, k, warm=False):
    pal = rng.uniform(0.05, 1.0, size=(k, 3))
    if warm:
        pal[:, 0] = rng.uniform(0.6, 1.0, size=k)
        pal[:, 2] *= 0.6
    pal[0] = rng.uniform(0.0, 0.15, size=3)
    pal[-1] = rng.uniform(0.85, 1.0, size=3)
    return pal


def _hayao(img, rng):
    out = imops.posterize(imops.saturate(imops.smooth(img, 3), 1.3), 6)
    return imops.ink(out, imops.edge_mask(img, rng.uniform(0.5, 0.8)))


def _shinkai(img, rng):
    out = imops.saturate(img, rng.uniform(1.4, 1.8))
    return imops.posterize(np.clip((out - 0.5) * 1.2 + 0.55, 0, 1), 8)


def _hosoda(img, rng):
    out = imops.posterize(imops.smooth(img, 5), 4)
    return imops.ink(out, imops.edge_mask(img, rng.uniform(0.6, 0.9)))


def _paprika(img, rng):
    out = imops.rotate_hue(imops.saturate(img, 1.8), rng.uniform(-60, 60))
    return imops.posterize(out, 5)


def _van_gogh(img, rng):
    h, w = img.shape[:2]
    noise = rng.normal(0, 0.12, size=(h, w, 1)).astype(np.float32)
    strokes = np.repeat(noise, 3, axis=2)
    strokes = ndimage.uniform_filter1d(strokes, size=int(rng.integers(3, 7)), axis=int(rng.integers(0, 2)))
    return imops.posterize(np.clip(imops.saturate(img, 1.4) + strokes, 0, 1), 6)


def _monet(img, rng):
    out = imops.smooth(img, 5)
    out = 0.7 * out + 0.3 * np.float32(rng.uniform(0.85, 1.0))
    return np.clip(out + rng.normal(0, 0.03, size=img.shape).astype(np.float32), 0, 1)


def _cezanne(img, rng):
    return imops.posterize(imops.pixelate(img, int(rng.integers(2, 4))), 5)


def _miyazaki(img, rng):
    out = imops.palette_remap(imops.smooth(img, 3), _random_palette(rng, 5, warm=True))
    return imops.ink(out, imops.edge_mask(img, 0.7))


def _as(img, rng):
    return imops.ink(imops.halftone(img, int(rng.integers(3, 5))), imops.edge_mask(img, 0.6))


def _kh(img, rng):
    out = imops.palette_remap(img, _random_palette(rng, int(rng.integers(3, 6))))
    return imops.ink(out, imops.edge_mask(img, 0.6), thickness=2)


def _whitebox(img, rng):
    out = imops.posterize(imops.smooth(img, 3), int(rng.integers(3, 6)))
    return imops.ink(out, imops.edge_mask(img, rng.uniform(0.4, 0.7)), thickness=int(rng.integers(1, 3)))


_PROCEDURAL: dict[str, Callable] = {
    "hayao": _hayao, "shinkai": _shinkai, "hosoda": _hosoda, "paprika": _paprika,
    "van_gogh": _van_gogh, "monet": _monet, "cezanne": _cezanne, "miyazaki": _miyazaki,
    "as": _as, "kh": _kh, "whitebox": _whitebox,
}


@dataclass(frozen=True)
class StyleTransform:
    """A named, seeded image-to-image function that preserves image size."""

    name: str
    fn: Callable[[np.ndarray, np.random.Generator], np.ndarray]

    def apply(self, img: np.ndarray, seed: int, image_id: str | None = None) -> np.ndarray:
        out = self.fn(img, child_rng(seed, 1))
        if out.shape != img.shape:
            raise ValueError(f"style {self.name} changed image shape {img.shape} -> {out.shape}")
        return np.clip(out, 0.0, 1.0).astype(np.float32)


class PrecomputedStyle(StyleTransform):
    """Looks up ``<directory>/<image_id>.png`` produced offline by a real style-transfer model."""

    def __init__(self, name: str, directory):
        directory = Path(directory)
        object.__setattr__(self, "directory", directory)
        super().__init__(name, lambda img, rng: img)

    def apply(self, img, seed, image_id=None):
        if image_id is None:
            raise ValueError(f"{self.name}: precomputed styles need the image id")
        from .coco import read_image
        out = read_image(self.directory / f"{image_id}.png")
        if out.shape != img.shape:
            out = imops.resize(out, img.shape[1], img.shape[0])
        return out


IDENTITY = StyleTransform("identity", lambda img, rng: img)


def procedural_style(slot: str) -> StyleTransform:
    if slot not in _PROCEDURAL:
        raise KeyError(f"unknown style slot {slot!r}; choose from {STYLE_SLOTS}")
    return StyleTransform(f"procedural:{slot}", _PROCEDURAL[slot])


@dataclass(frozen=True)
class StyleBank:
    transforms: tuple[StyleTransform, ...]
    mode: str = "all"

    def __post_init__(self):
        object.__setattr__(self, "transforms", tuple(self.transforms))
        if self.mode not in MODES:
            raise ValueError(f"unknown style mode {self.mode!r}")
        if not self.transforms:
            raise ValueError("a style bank needs at least one transform")
        if self.mode == "none" and self.transforms != (IDENTITY,):
            raise ValueError("mode 'none' holds only the identity transform")
        if self.mode == "single" and len(self.transforms) != 1:
            raise ValueError("mode 'single' holds exactly one transform")

    @classmethod
    def none(cls) -> "StyleBank":
        return cls((IDENTITY,), "none")

    @classmethod
    def single(cls, slot: str) -> "StyleBank":
        return cls((procedural_style(slot),), "single")

    @classmethod
    def all_styles(cls) -> "StyleBank":
        return cls(tuple(procedural_style(s) for s in STYLE_SLOTS), "all")

    @classmethod
    def top_k(cls, slots: Sequence[str] = TOP5_SLOTS) -> "StyleBank":
        return cls(tuple(procedural_style(s) for s in slots), "top_k")

    @classmethod
    def from_spec(cls, mode: str, slots: Sequence[str] | None = None) -> "StyleBank":
        if mode == "none":
            return cls.none()
        if mode == "all":
            return cls.all_styles() if not slots else cls(tuple(procedural_style(s) for s in slots), "all")
        if mode == "top_k":
            return cls.top_k(slots or TOP5_SLOTS)
        if mode == "single":
            if not slots or len(slots) != 1:
                raise ValueError("mode 'single' needs exactly one slot")
            return cls.single(slots[0])
        raise ValueError(f"unknown style mode {mode!r}")


def choose_style(bank: StyleBank, seed: int) -> int:
    """Index of the transform used for the image drawn with ``seed``."""
    if bank.mode in ("none", "single"):
        return 0
    return int(child_rng(seed, _PICK_KEY).integers(len(bank.transforms)))


def apply_style(img: np.ndarray, bank: StyleBank, seed: int, image_id: str | None = None) -> np.ndarray:
    if bank.mode == "none":
        return img
    return bank.transforms[choose_style(bank, seed)].apply(img, seed, image_id)
