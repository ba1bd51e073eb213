from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from ..geometry import Box, Klass, boxes_to_array

SOURCES = ("natural", "drawing", "synthetic")
MIN_VISIBLE = 0.25
_TOL = 1e-6

Labels = dict  # Klass -> list[Box]


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Counter-style RNG derivation: the stream depends only on (seed, keys)."""
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, *(int(k) & 0xFFFFFFFF for k in keys)])


@dataclass
class AnnotatedImage:
    """An HxWx3 float32 raster in [0, 1] with face and body boxes."""

    image: np.ndarray
    face_boxes: list[Box] = field(default_factory=list)
    body_boxes: list[Box] = field(default_factory=list)
    source: str = "synthetic"
    id: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.image.ndim != 3 or self.image.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {self.image.shape}")
        if self.source not in SOURCES:
            raise ValueError(f"unknown source {self.source!r}")
        h, w = self.image.shape[:2]
        for b in self.face_boxes + self.body_boxes:
            x1, y1, x2, y2 = b.to_corner()
            if x1 < -_TOL or y1 < -_TOL or x2 > w + _TOL or y2 > h + _TOL:
                raise ValueError(f"box {b} outside {w}x{h} image {self.id!r}")

    @property
    def height(self) -> int:
        return self.image.shape[0]

    @property
    def width(self) -> int:
        return self.image.shape[1]

    def labels(self) -> Labels:
        return {Klass.FACE: list(self.face_boxes), Klass.BODY: list(self.body_boxes)}

    def boxes(self, klass: Klass) -> list[Box]:
        return self.face_boxes if Klass(klass) is Klass.FACE else self.body_boxes

    def with_content(self, image: np.ndarray, labels: Mapping[Klass, Sequence[Box]]) -> "AnnotatedImage":
        return replace(self, image=image, face_boxes=list(labels.get(Klass.FACE, [])),
                       body_boxes=list(labels.get(Klass.BODY, [])))


def transport_boxes(boxes: Sequence[Box], matrix: np.ndarray, clip: tuple[float, float, float, float],
                    min_visible: float = MIN_VISIBLE) -> list[Box]:
    """Map boxes through a 2x3 affine transform, take the axis-aligned hull,
    clip to ``clip = (x1, y1, x2, y2)`` and drop boxes whose visible fraction
    of the hull area is below ``min_visible``."""
    if not boxes:
        return []
    c = boxes_to_array(boxes)
    pts = np.stack([c[:, [0, 1]], c[:, [2, 1]], c[:, [0, 3]], c[:, [2, 3]]], axis=1)  # (n, 4, 2)
    m = np.asarray(matrix, dtype=np.float64)
    moved = pts @ m[:, :2].T + m[:, 2]
    lo = moved.min(axis=1)
    hi = moved.max(axis=1)
    area = (hi[:, 0] - lo[:, 0]) * (hi[:, 1] - lo[:, 1])
    cx1, cy1, cx2, cy2 = clip
    x1 = np.clip(lo[:, 0], cx1, cx2)
    y1 = np.clip(lo[:, 1], cy1, cy2)
    x2 = np.clip(hi[:, 0], cx1, cx2)
    y2 = np.clip(hi[:, 1], cy1, cy2)
    vis = (x2 - x1) * (y2 - y1)
    out = []
    for i in range(len(boxes)):
        if x2[i] > x1[i] and y2[i] > y1[i] and vis[i] >= min_visible * area[i]:
            out.append(Box.from_corner(float(x1[i]), float(y1[i]), float(x2[i]), float(y2[i])))
    return out


def transport_labels(labels: Mapping[Klass, Sequence[Box]], matrix, clip, min_visible=MIN_VISIBLE) -> Labels:
    return {k: transport_boxes(v, matrix, clip, min_visible) for k, v in labels.items()}


def quantize(image: np.ndarray) -> np.ndarray:
    """Snap to the 8-bit grid so rasters survive a PNG roundtrip exactly."""
    return (np.round(np.clip(image, 0.0, 1.0) * 255.0) / 255.0).astype(np.float32)
