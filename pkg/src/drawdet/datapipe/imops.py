"""Small raster operations shared by styles and augmentation.  Images are HxWx3 float32 in [0, 1]."""

from __future__ import annotations

import math

import cv2
import numpy as np
from scipy import ndimage

_RGB2YIQ = np.array([[0.299, 0.587, 0.114],
                     [0.596, -0.274, -0.322],
                     [0.211, -0.523, 0.312]])
_YIQ2RGB = np.linalg.inv(_RGB2YIQ)


def luminance(img: np.ndarray) -> np.ndarray:
    return img @ _RGB2YIQ[0].astype(np.float32)


def rotate_hue(img: np.ndarray, degrees: float) -> np.ndarray:
    """Rotate chroma in YIQ space by ``degrees``; luminance is preserved before clipping."""
    t = math.radians(degrees)
    rot = np.array([[1, 0, 0], [0, math.cos(t), -math.sin(t)], [0, math.sin(t), math.cos(t)]])
    m = (_YIQ2RGB @ rot @ _RGB2YIQ).astype(np.float32)
    return np.clip(img @ m.T, 0.0, 1.0)


def saturate(img: np.ndarray, factor: float) -> np.ndarray:
    gray = luminance(img)[..., None]
    return np.clip(gray + (img - gray) * factor, 0.0, 1.0)


def posterize(img: np.ndarray, levels: int) -> np.ndarray:
    return np.round(img * (levels - 1)) / (levels - 1)


def smooth(img: np.ndarray, size: int) -> np.ndarray:
    return ndimage.uniform_filter(img, size=(size, size, 1), mode="nearest")


def edge_mask(img: np.ndarray, thresh: float) -> np.ndarray:
    lum = luminance(img)
    mag = np.hypot(ndimage.sobel(lum, axis=0), ndimage.sobel(lum, axis=1))
    return mag > thresh


def ink(img: np.ndarray, mask: np.ndarray, thickness: int = 1, color=(0.05, 0.05, 0.05)) -> np.ndarray:
    if thickness > 1:
        mask = ndimage.binary_dilation(mask, iterations=thickness - 1)
    out = img.copy()
    out[mask] = np.asarray(color, dtype=np.float32)
    return out


def palette_remap(img: np.ndarray, palette: np.ndarray) -> np.ndarray:
    """Quantise luminance into ``len(palette)`` bands and paint each band one palette colour (dark to light)."""
    palette = np.asarray(palette, dtype=np.float32)
    order = np.argsort(palette @ _RGB2YIQ[0].astype(np.float32))
    k = len(palette)
    band = np.clip((luminance(img) * k).astype(int), 0, k - 1)
    return palette[order][band]


def halftone(img: np.ndarray, cell: int = 4) -> np.ndarray:
    """Grayscale screentone: one dot per cell with radius set by local darkness."""
    h, w = img.shape[:2]
    lum = luminance(img)
    yy, xx = np.mgrid[0:h, 0:w]
    cy = (yy // cell) * cell + cell / 2 - 0.5
    cx = (xx // cell) * cell + cell / 2 - 0.5
    local = ndimage.uniform_filter(lum, size=cell, mode="nearest")
    radius = (1.0 - local) * cell * 0.7
    dots = np.hypot(yy - cy, xx - cx) < radius
    out = np.where(dots | (lum < 0.2), 0.05, 0.97).astype(np.float32)
    return np.repeat(out[..., None], 3, axis=2)


def pixelate(img: np.ndarray, block: int) -> np.ndarray:
    h, w = img.shape[:2]
    small = img[::block, ::block]
    return np.repeat(np.repeat(small, block, axis=0), block, axis=1)[:h, :w]


def resize(img: np.ndarray, width: int, height: int) -> np.ndarray:
    if img.shape[1] == width and img.shape[0] == height:
        return img.copy()
    interp = cv2.INTER_AREA if width < img.shape[1] else cv2.INTER_LINEAR
    return cv2.resize(img, (width, height), interpolation=interp)


def warp_affine(img: np.ndarray, matrix: np.ndarray, width: int, height: int, fill: float = 0.5) -> np.ndarray:
    return cv2.warpAffine(img, np.asarray(matrix, dtype=np.float64), (width, height), flags=cv2.INTER_LINEAR,
                          borderMode=cv2.BORDER_CONSTANT, borderValue=(fill, fill, fill))
