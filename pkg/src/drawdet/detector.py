"""Tiny anchor-free detector with a shared trunk and two single-class heads.

All weights live in one flat vector (:class:`DetectorParams`).  Named views
into it feed a functional forward pass, which keeps the teacher/student
arithmetic (EMA, reset, SGD) down to plain vector operations.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .geometry import Box, Klass, KLASSES, ScoredBox, nms_indices

SEGMENTS = ("backbone", "neck", "head_face", "head_body")
PRIOR_PROB = 0.01
GN_GROUPS = 4


@dataclass(frozen=True)
class DetectorConfig:
    input_size: int = 256
    strides: tuple[int, ...] = (8, 16, 32)
    width_mult: float = 1.0
    depth_mult: float = 1.0
    num_heads: int = 2

    def __post_init__(self):
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        s = self.strides
        if not s or s[0] < 2 or s[0] & (s[0] - 1):
            raise ValueError(f"first stride must be a power of two >= 2, got {s}")
        if any(b != 2 * a for a, b in zip(s, s[1:])):
            raise ValueError(f"strides must double level to level, got {s}")
        if self.input_size % s[-1]:
            raise ValueError(f"input_size {self.input_size} not divisible by max stride {s[-1]}")
        if self.num_heads != 2:
            raise ValueError("the detector has exactly two heads (face, body)")
        if self.width_mult <= 0 or self.depth_mult <= 0:
            raise ValueError("width_mult and depth_mult must be positive")

    def grid_sizes(self) -> list[int]:
        return [self.input_size // s for s in self.strides]

    def num_locations(self) -> int:
        return sum(g * g for g in self.grid_sizes())

    def size_ranges(self) -> list[tuple[float, float]]:
        """Object-size band (max side, pixels) handled by each level."""
        scale = self.input_size / 256.0
        edges = [64.0 * (2 ** i) * scale for i in range(len(self.strides) - 1)]
        lo = [0.0] + edges
        hi = edges + [math.inf]
        return list(zip(lo, hi))

    def channels(self) -> dict[str, int]:
        def ch(c):
            return max(4, int(round(c * self.width_mult)))

        return {"stem": ch(8), "level": ch(16), "neck": ch(24), "head": ch(24)}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["strides"] = list(self.strides)
        return d


@dataclass(frozen=True)
class ParamLayout:
    """Ordered (name, shape) table; names are ``<segment>.<layer>.<w|b>``."""

    entries: tuple[tuple[str, tuple[int, ...]], ...]
    offsets: tuple[int, ...] = field(init=False)
    size: int = field(init=False)

    def __post_init__(self):
        offs, n = [], 0
        for _, shape in self.entries:
            offs.append(n)
            n += int(np.prod(shape))
        object.__setattr__(self, "offsets", tuple(offs))
        object.__setattr__(self, "size", n)

    def segment_slice(self, segment: str) -> slice:
        idx = [i for i, (name, _) in enumerate(self.entries) if name.split(".", 1)[0] == segment]
        if not idx:
            raise KeyError(segment)
        start = self.offsets[idx[0]]
        last = idx[-1]
        stop = self.offsets[last] + int(np.prod(self.entries[last][1]))
        return slice(start, stop)

    def to_list(self) -> list:
        return [[name, list(shape)] for name, shape in self.entries]


def _conv(entries, name, cin, cout, k, norm=True):
    entries.append((f"{name}.w", (cout, cin, k, k)))
    entries.append((f"{name}.b", (cout,)))
    if norm:
        entries.append((f"{name}.gn_w", (cout,)))
        entries.append((f"{name}.gn_b", (cout,)))


def _backbone_stages(config: DetectorConfig) -> list[list[tuple[str, int]]]:
    """Backbone convs grouped by pyramid level as (layer name, stride)."""
    reps = max(1, int(round(config.depth_mult)))
    n_stem = int(math.log2(config.strides[0]))
    stages = [[(f"backbone.stem{i}", 2) for i in range(n_stem)]
              + [(f"backbone.stem_extra{i}", 1) for i in range(1, reps)]]
    for lvl in range(1, len(config.strides)):
        stages.append([(f"backbone.down{lvl}", 2)]
                      + [(f"backbone.down{lvl}_extra{i}", 1) for i in range(1, reps)])
    return stages


def build_layout(config: DetectorConfig) -> ParamLayout:
    ch = config.channels()
    entries: list = []
    cin = 3
    stages = _backbone_stages(config)
    n_stem = int(math.log2(config.strides[0]))
    for lvl, stage in enumerate(stages):
        for j, (name, _) in enumerate(stage):
            cout = ch["stem"] if (lvl == 0 and j < n_stem - 1) else ch["level"]
            _conv(entries, name, cin, cout, 3)
            cin = cout
    for lvl in range(len(config.strides)):
        _conv(entries, f"neck.lateral{lvl}", ch["level"], ch["neck"], 1, norm=False)
        _conv(entries, f"neck.smooth{lvl}", ch["neck"], ch["neck"], 3)
    for klass in KLASSES:
        seg = f"head_{klass.value}"
        _conv(entries, f"{seg}.stem", ch["neck"], ch["head"], 1)
        _conv(entries, f"{seg}.cls_conv", ch["head"], ch["head"], 3)
        _conv(entries, f"{seg}.cls_pred", ch["head"], 1, 1, norm=False)
        _conv(entries, f"{seg}.reg_conv", ch["head"], ch["head"], 3)
        _conv(entries, f"{seg}.reg_pred", ch["head"], 4, 1, norm=False)
    return ParamLayout(tuple(entries))


class DetectorParams:
    """Flat parameter vector plus its named layout."""

    def __init__(self, layout: ParamLayout, vector: torch.Tensor):
        if vector.ndim != 1 or vector.numel() != layout.size:
            raise ValueError(f"vector of {vector.numel()} values does not match layout size {layout.size}")
        self.layout = layout
        self.vector = vector

    def tensors(self) -> dict[str, torch.Tensor]:
        out = {}
        for (name, shape), off in zip(self.layout.entries, self.layout.offsets):
            n = int(np.prod(shape))
            out[name] = self.vector[off:off + n].view(shape)
        return out

    def segment(self, name: str) -> torch.Tensor:
        return self.vector[self.layout.segment_slice(name)]

    def clone(self) -> "DetectorParams":
        return DetectorParams(self.layout, self.vector.detach().clone())

    def to(self, dtype: torch.dtype) -> "DetectorParams":
        return DetectorParams(self.layout, self.vector.detach().to(dtype))

    def same_layout(self, other: "DetectorParams") -> bool:
        return self.layout.entries == other.layout.entries

    def __len__(self) -> int:
        return self.layout.size


def init_params(config: DetectorConfig, seed: int = 0, dtype=torch.float32) -> DetectorParams:
    """Fan-in uniform conv weights, zero biases, confidence bias at the 1% prior."""
    layout = build_layout(config)
    gen = torch.Generator().manual_seed(int(seed))
    vec = torch.zeros(layout.size, dtype=torch.float64)
    for (name, shape), off in zip(layout.entries, layout.offsets):
        n = int(np.prod(shape))
        if name.endswith(".w") and len(shape) == 4:
            fan_in = int(np.prod(shape[1:]))
            bound = math.sqrt(6.0 / fan_in) if not name.split(".")[-2].endswith("_pred") else 0.01
            vec[off:off + n] = (torch.rand(n, generator=gen, dtype=torch.float64) * 2 - 1) * bound
        elif name.endswith(".gn_w"):
            vec[off:off + n] = 1.0
        elif name.endswith("cls_pred.b"):
            vec[off:off + n] = math.log(PRIOR_PROB / (1 - PRIOR_PROB))
    return DetectorParams(layout, vec.to(dtype))


@dataclass
class HeadOutput:
    """Per-level grids for one class.

    ``conf[l]`` has shape ``(N, G_l, G_l)`` (logits); ``reg[l]`` has shape
    ``(N, 4, G_l, G_l)`` holding ``(dx, dy, log_w, log_h)`` in stride units.
    """

    klass: Klass
    strides: tuple[int, ...]
    conf: list[torch.Tensor]
    reg: list[torch.Tensor]

    @property
    def batch_size(self) -> int:
        return self.conf[0].shape[0]

    def flat_logits(self) -> torch.Tensor:
        return torch.cat([c.flatten(1) for c in self.conf], dim=1)

    def flat_reg(self) -> torch.Tensor:
        """Shape ``(N, L, 4)`` in level-major, row-major location order."""
        return torch.cat([r.flatten(2) for r in self.reg], dim=2).transpose(1, 2)


def to_batch(images: Sequence[np.ndarray] | np.ndarray, dtype=torch.float32) -> torch.Tensor:
    """Stack HxWx3 arrays into an NCHW tensor."""
    arr = np.asarray(images)
    if arr.ndim == 3:
        arr = arr[None]
    return torch.from_numpy(np.ascontiguousarray(arr.transpose(0, 3, 1, 2))).to(dtype)


def _conv2d(x, p, name, stride=1):
    w = p[f"{name}.w"]
    return F.conv2d(x, w, p[f"{name}.b"], stride=stride, padding=w.shape[-1] // 2)


def _block(x, p, name, stride=1):
    """conv -> group norm -> SiLU"""
    y = _conv2d(x, p, name, stride)
    y = F.group_norm(y, min(GN_GROUPS, y.shape[1]), p[f"{name}.gn_w"], p[f"{name}.gn_b"])
    return F.silu(y)


def _trunk(p: Mapping[str, torch.Tensor], images: torch.Tensor, config: DetectorConfig) -> list[torch.Tensor]:
    feats = []
    x = images
    for stage in _backbone_stages(config):
        for name, stride in stage:
            x = _block(x, p, name, stride)
        feats.append(x)
    laterals = [_conv2d(f, p, f"neck.lateral{i}") for i, f in enumerate(feats)]
    outs = [None] * len(laterals)
    top = laterals[-1]
    outs[-1] = top
    for i in range(len(laterals) - 2, -1, -1):
        top = laterals[i] + F.interpolate(top, scale_factor=2, mode="nearest")
        outs[i] = top
    return [_block(o, p, f"neck.smooth{i}") for i, o in enumerate(outs)]


def _head(p, feats, klass: Klass):
    seg = f"head_{Klass(klass).value}"
    conf, reg = [], []
    for f in feats:
        h = _block(f, p, f"{seg}.stem")
        c = _block(h, p, f"{seg}.cls_conv")
        r = _block(h, p, f"{seg}.reg_conv")
        conf.append(_conv2d(c, p, f"{seg}.cls_pred")[:, 0])
        reg.append(_conv2d(r, p, f"{seg}.reg_pred"))
    return conf, reg


def _check_images(images: torch.Tensor, config: DetectorConfig):
    if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != config.input_size \
            or images.shape[3] != config.input_size:
        raise ValueError(
            f"expected images of shape (N, 3, {config.input_size}, {config.input_size}), got {tuple(images.shape)}")


def forward(params: DetectorParams, images: torch.Tensor, klass: Klass, config: DetectorConfig) -> HeadOutput:
    """Run trunk plus the ``klass`` head.  The other head's weights are never read."""
    _check_images(images, config)
    images = images.to(params.vector.dtype)
    p = params.tensors()
    conf, reg = _head(p, _trunk(p, images, config), klass)
    return HeadOutput(Klass(klass), config.strides, conf, reg)


def forward_both(params: DetectorParams, images: torch.Tensor, config: DetectorConfig) -> dict[Klass, HeadOutput]:
    _check_images(images, config)
    images = images.to(params.vector.dtype)
    p = params.tensors()
    feats = _trunk(p, images, config)
    out = {}
    for klass in KLASSES:
        conf, reg = _head(p, feats, klass)
        out[klass] = HeadOutput(klass, config.strides, conf, reg)
    return out


def location_grid(config: DetectorConfig) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(col, row, stride) for every location in level-major, row-major order."""
    cols, rows, strides = [], [], []
    for g, s in zip(config.grid_sizes(), config.strides):
        r, c = np.meshgrid(np.arange(g), np.arange(g), indexing="ij")
        cols.append(c.ravel())
        rows.append(r.ravel())
        strides.append(np.full(g * g, s))
    return (np.concatenate(cols).astype(np.float64), np.concatenate(rows).astype(np.float64),
            np.concatenate(strides).astype(np.float64))


def sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-np.logaddexp(0.0, -x))


def decode_arrays(logits: np.ndarray, reg: np.ndarray, config: DetectorConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised decode of one image: ``logits (L,)``, ``reg (L, 4)`` -> corners, scores.

    ``cx = (col + dx) * stride`` and ``w = exp(log_w) * stride``; boxes are
    clipped to the image and kept at least ``1e-3`` px wide.
    """
    col, row, stride = location_grid(config)
    reg = np.asarray(reg, dtype=np.float64)
    scores = sigmoid(logits)
    cx = (col + reg[:, 0]) * stride
    cy = (row + reg[:, 1]) * stride
    w = np.exp(np.clip(reg[:, 2], -20.0, 20.0)) * stride
    h = np.exp(np.clip(reg[:, 3], -20.0, 20.0)) * stride
    size = float(config.input_size)
    eps = 1e-3
    x1 = np.clip(cx - w / 2, 0.0, size - eps)
    y1 = np.clip(cy - h / 2, 0.0, size - eps)
    x2 = np.maximum(np.clip(cx + w / 2, 0.0, size), x1 + eps)
    y2 = np.maximum(np.clip(cy + h / 2, 0.0, size), y1 + eps)
    return np.stack([x1, y1, x2, y2], axis=1), scores


def _head_arrays(out: HeadOutput, index: int) -> tuple[np.ndarray, np.ndarray]:
    logits = out.flat_logits()[index].detach().double().numpy()
    reg = out.flat_reg()[index].detach().double().numpy()
    return logits, reg


def decode(out: HeadOutput, config: DetectorConfig, index: int = 0) -> list[ScoredBox]:
    """Every grid location of image ``index`` as a scored box."""
    corners, scores = decode_arrays(*_head_arrays(out, index), config)
    return _to_scored(corners, scores, out.klass)


def _to_scored(corners, scores, klass) -> list[ScoredBox]:
    return [ScoredBox(Box((c[0] + c[2]) / 2, (c[1] + c[3]) / 2, c[2] - c[0], c[3] - c[1]), float(s), klass)
            for c, s in zip(corners, scores)]


def encode(box: Box, col: int, row: int, stride: int) -> tuple[float, float, float, float]:
    """Regression target for ``box`` at grid cell (col, row); inverse of decode."""
    return (box.cx / stride - col, box.cy / stride - row, math.log(box.w / stride), math.log(box.h / stride))


def alternate_head(iteration: int) -> Klass:
    """Head trained at a given optimizer step: face on even steps, body on odd."""
    if iteration < 0:
        raise ValueError("iteration must be non-negative")
    return Klass.FACE if iteration % 2 == 0 else Klass.BODY


def filter_and_nms(corners, scores, conf_thresh, nms_thresh, max_dets=None):
    """Score filter (``>= conf_thresh``) then greedy NMS; returns kept indices."""
    cand = np.flatnonzero(scores >= conf_thresh)
    keep = cand[nms_indices(corners[cand], scores[cand], nms_thresh)]
    if max_dets is not None:
        keep = keep[:max_dets]
    return keep


@torch.no_grad()
def predict_batch(params: DetectorParams, images: torch.Tensor, config: DetectorConfig,
                  conf_thresh: float = 0.65, nms_thresh: float = 0.4,
                  max_dets: int | None = None) -> list[dict[Klass, list[ScoredBox]]]:
    for t in (conf_thresh, nms_thresh):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"thresholds must lie in [0, 1], got {t}")
    outs = forward_both(params, images, config)
    results = [dict() for _ in range(images.shape[0])]
    for klass, out in outs.items():
        logits = out.flat_logits().double().numpy()
        reg = out.flat_reg().double().numpy()
        for i in range(images.shape[0]):
            corners, scores = decode_arrays(logits[i], reg[i], config)
            keep = filter_and_nms(corners, scores, conf_thresh, nms_thresh, max_dets)
            results[i][klass] = _to_scored(corners[keep], scores[keep], klass)
    return results


def predict(params: DetectorParams, image: np.ndarray | torch.Tensor, config: DetectorConfig,
            conf_thresh: float = 0.65, nms_thresh: float = 0.4) -> dict[Klass, list[ScoredBox]]:
    """forward -> decode -> score filter -> per-class NMS for a single HxWx3 image."""
    batch = image if isinstance(image, torch.Tensor) else to_batch(image)
    if batch.ndim == 3:
        batch = batch[None]
    return predict_batch(params, batch, config, conf_thresh, nms_thresh)[0]
