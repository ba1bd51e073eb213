"""Box primitives, IoU and greedy non-maximum suppression.

Boxes are stored in center form ``(cx, cy, w, h)`` in pixels.  The array
helpers work on corner-form ``(x1, y1, x2, y2)`` float64 arrays and use the
same arithmetic as the scalar :func:`iou`, so both paths agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np


class InvalidBoxError(ValueError):
    """Raised for boxes with non-positive or non-finite extent."""


class ContractError(ValueError):
    """Raised when a caller violates an input contract (e.g. mixed classes)."""


class Klass(str, Enum):
    FACE = "face"
    BODY = "body"


KLASSES = (Klass.FACE, Klass.BODY)


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        vals = (self.cx, self.cy, self.w, self.h)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidBoxError(f"non-finite box {vals}")
        if not (self.w > 0 and self.h > 0):
            raise InvalidBoxError(f"box needs positive width and height, got w={self.w}, h={self.h}")

    @property
    def area(self) -> float:
        return self.w * self.h

    def to_corner(self) -> tuple[float, float, float, float]:
        return to_corner(self)

    @classmethod
    def from_corner(cls, x1: float, y1: float, x2: float, y2: float) -> "Box":
        return from_corner(x1, y1, x2, y2)

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.cx, self.cy, self.w, self.h)


@dataclass(frozen=True)
class ScoredBox:
    box: Box
    score: float
    klass: Klass

    def __post_init__(self):
        if not (0.0 <= self.score <= 1.0):
            raise ContractError(f"score must lie in [0, 1], got {self.score}")
        object.__setattr__(self, "klass", Klass(self.klass))


def to_corner(b: Box) -> tuple[float, float, float, float]:
    hw, hh = b.w / 2, b.h / 2
    return (b.cx - hw, b.cy - hh, b.cx + hw, b.cy + hh)


def from_corner(x1: float, y1: float, x2: float, y2: float) -> Box:
    if not (x2 > x1 and y2 > y1):
        raise InvalidBoxError(f"corner box ({x1}, {y1}, {x2}, {y2}) has no area")
    return Box((x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1)


def _iou_corners(ax1, ay1, ax2, ay2, bx1, by1, bx2, by2):
    # Shared by the scalar and vectorised paths; keep the operation order identical.
    iw = np.maximum(0.0, np.minimum(ax2, bx2) - np.maximum(ax1, bx1))
    ih = np.maximum(0.0, np.minimum(ay2, by2) - np.maximum(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def iou(a: Box, b: Box) -> float:
    """Intersection over union; 0 for disjoint or edge-touching boxes."""
    return float(_iou_corners(*(np.float64(v) for v in to_corner(a) + to_corner(b))))


def boxes_to_array(boxes: Iterable[Box]) -> np.ndarray:
    """Corner-form ``(n, 4)`` float64 array."""
    arr = np.array([to_corner(b) for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between corner-form arrays of shape ``(n, 4)`` and ``(m, 4)``."""
    a = np.asarray(a, dtype=np.float64)[:, None, :]
    b = np.asarray(b, dtype=np.float64)[None, :, :]
    return _iou_corners(a[..., 0], a[..., 1], a[..., 2], a[..., 3],
                        b[..., 0], b[..., 1], b[..., 2], b[..., 3])


def nms_indices(corners: np.ndarray, scores: np.ndarray, iou_thresh: float) -> np.ndarray:
    """Greedy NMS over corner-form boxes; returns kept indices in output order.

    Equal scores keep input order (stable sort).  A box is suppressed when its
    IoU with an already kept box is strictly greater than ``iou_thresh``.
    """
    if not 0.0 <= iou_thresh <= 1.0:
        raise ContractError(f"iou_thresh must lie in [0, 1], got {iou_thresh}")
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    if order.size == 0:
        return order
    corners = np.asarray(corners, dtype=np.float64)[order]
    ious = iou_matrix(corners, corners)
    alive = np.ones(order.size, dtype=bool)
    keep = []
    for i in range(order.size):
        if not alive[i]:
            continue
        keep.append(i)
        alive[i + 1:] &= ~(ious[i, i + 1:] > iou_thresh)
    return order[np.array(keep, dtype=np.intp)]


def nms(candidates: Sequence[ScoredBox], iou_thresh: float) -> list[ScoredBox]:
    """Single-class greedy NMS, output sorted by descending score."""
    if not candidates:
        if not 0.0 <= iou_thresh <= 1.0:
            raise ContractError(f"iou_thresh must lie in [0, 1], got {iou_thresh}")
        return []
    klasses = {c.klass for c in candidates}
    if len(klasses) > 1:
        raise ContractError(f"nms expects a single class, got {sorted(k.value for k in klasses)}")
    corners = boxes_to_array(c.box for c in candidates)
    scores = np.array([c.score for c in candidates])
    return [candidates[i] for i in nms_indices(corners, scores, iou_thresh)]
