"""Detection losses: gated OHEM confidence loss, smooth-L1 regression,
center-sampling supervised loss and the focal baseline."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .detector import DetectorConfig, HeadOutput, location_grid
from .geometry import Box

EPS = 1e-7


@dataclass(frozen=True)
class OhemConfig:
    ct_pos_thresh: float = 0.5
    ct_neg_thresh: float = 0.5
    neg_pos_ratio: int = 3
    min_neg: int = 16

    def __post_init__(self):
        for name in ("ct_pos_thresh", "ct_neg_thresh"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.neg_pos_ratio < 1:
            raise ValueError("neg_pos_ratio must be >= 1")
        if self.min_neg < 0:
            raise ValueError("min_neg must be >= 0")


@dataclass
class LossBreakdown:
    conf: float | torch.Tensor
    reg: float | torch.Tensor
    total: float | torch.Tensor
    beta: float

    def detach(self) -> "LossBreakdown":
        def val(x):
            return float(x.detach()) if isinstance(x, torch.Tensor) else float(x)
        return LossBreakdown(val(self.conf), val(self.reg), val(self.total), float(self.beta))


def _is_tensor(*xs):
    return any(isinstance(x, torch.Tensor) for x in xs)


def smooth_l1(gt, pred):
    """0.5 e^2 below unit error, e - 0.5 above; elementwise on floats, arrays or tensors."""
    if _is_tensor(gt, pred):
        e = torch.abs(torch.as_tensor(gt) - pred) if not isinstance(gt, torch.Tensor) else torch.abs(gt - pred)
        return torch.where(e < 1.0, 0.5 * e * e, e - 0.5)
    e = np.abs(np.asarray(gt, dtype=np.float64) - np.asarray(pred, dtype=np.float64))
    out = np.where(e < 1.0, 0.5 * e * e, e - 0.5)
    return float(out) if out.ndim == 0 else out


def gate_indicators(p_hat, cfg: OhemConfig):
    """(ct_pos, ct_neg) as 0/1 values; positive gate uses >=, negative gate uses <=."""
    if isinstance(p_hat, torch.Tensor):
        ph = p_hat.detach()
        return (ph >= cfg.ct_pos_thresh).to(p_hat.dtype), (ph <= cfg.ct_neg_thresh).to(p_hat.dtype)
    ph = np.asarray(p_hat, dtype=np.float64)
    return (ph >= cfg.ct_pos_thresh).astype(np.float64), (ph <= cfg.ct_neg_thresh).astype(np.float64)


def gated_conf_loss(p, p_hat, cfg: OhemConfig):
    """Confidence loss of selected proposals with threshold gates.

    ``-p * ct_pos * log(p_hat) - (1 - p) * ct_neg * log(1 - p_hat)``.  The gates
    are evaluated on the raw confidence and carry no gradient; ``p_hat`` is
    clamped to ``[1e-7, 1 - 1e-7]`` before the logs.
    """
    ct_pos, ct_neg = gate_indicators(p_hat, cfg)
    if isinstance(p_hat, torch.Tensor):
        q = p_hat.clamp(EPS, 1 - EPS)
        p = torch.as_tensor(p, dtype=p_hat.dtype)
        return -p * ct_pos * torch.log(q) - (1 - p) * ct_neg * torch.log(1 - q)
    q = np.clip(np.asarray(p_hat, dtype=np.float64), EPS, 1 - EPS)
    p = np.asarray(p, dtype=np.float64)
    out = -p * ct_pos * np.log(q) - (1 - p) * ct_neg * np.log(1 - q)
    out = out + 0.0  # turn -0.0 into 0.0
    return float(out) if out.ndim == 0 else out


def bce(p, p_hat):
    """Plain binary cross-entropy with the same clamp as :func:`gated_conf_loss`."""
    if isinstance(p_hat, torch.Tensor):
        q = p_hat.clamp(EPS, 1 - EPS)
        return -p * torch.log(q) - (1 - p) * torch.log(1 - q)
    q = np.clip(np.asarray(p_hat, dtype=np.float64), EPS, 1 - EPS)
    out = -p * np.log(q) - (1 - p) * np.log(1 - q)
    return float(out) if np.ndim(out) == 0 else out


def focal_conf_loss(p, p_hat, alpha: float | None = 0.25, gamma_focal: float = 2.0):
    """Focal-modulated BCE.  ``alpha=None`` disables class weighting."""
    tensor = isinstance(p_hat, torch.Tensor)
    if tensor:
        q = p_hat.clamp(EPS, 1 - EPS)
        p = torch.as_tensor(p, dtype=p_hat.dtype)
        log = torch.log
    else:
        q = np.clip(np.asarray(p_hat, dtype=np.float64), EPS, 1 - EPS)
        p = np.asarray(p, dtype=np.float64)
        log = np.log
    pt = p * q + (1 - p) * (1 - q)
    weight = (1 - pt) ** gamma_focal
    if alpha is not None:
        weight = weight * (p * alpha + (1 - p) * (1 - alpha))
    out = -weight * log(pt)
    if tensor:
        return out
    return float(out) if np.ndim(out) == 0 else out


def select_hard_examples(per_candidate_losses, positives, cfg: OhemConfig) -> np.ndarray:
    """All positives plus the highest-loss negatives, as a sorted index array.

    Keeps ``max(neg_pos_ratio * n_pos, min_neg)`` negatives (or all of them if
    fewer exist).  Equal losses are ranked by index.
    """
    losses = np.asarray(per_candidate_losses, dtype=np.float64).ravel()
    pos = np.unique(np.asarray(list(positives), dtype=np.intp))
    if pos.size and (pos.min() < 0 or pos.max() >= losses.size):
        raise ValueError("positive indices outside the candidate range")
    is_neg = np.ones(losses.size, dtype=bool)
    is_neg[pos] = False
    neg = np.flatnonzero(is_neg)
    n_keep = min(neg.size, max(cfg.neg_pos_ratio * pos.size, cfg.min_neg))
    ranked = neg[np.argsort(-losses[neg], kind="stable")][:n_keep]
    return np.sort(np.concatenate([pos, ranked]))


def total_loss(conf, reg, beta: float) -> LossBreakdown:
    if not _is_tensor(conf, reg) and (conf < 0 or reg < 0):
        raise ValueError("loss components must be non-negative")
    return LossBreakdown(conf, reg, conf + beta * reg, beta)


@dataclass
class Targets:
    """Per-location assignment for one image: ``positive (L,)``, ``boxes (L, 4)``
    encoded regression targets and ``gt_index (L,)`` (-1 for background)."""

    positive: np.ndarray
    encoded: np.ndarray
    gt_index: np.ndarray


def assign_targets(gts: Sequence[Box], config: DetectorConfig) -> Targets:
    """Center-sampling assignment.

    Each box goes to the level whose size band holds ``max(w, h)``; the 3x3
    cells around its center cell become positives.  Where boxes compete for a
    cell the smaller box wins (ties by list order).
    """
    col, row, stride = location_grid(config)
    n_loc = col.size
    gt_index = np.full(n_loc, -1, dtype=np.intp)
    best_area = np.full(n_loc, np.inf)
    level_start = np.cumsum([0] + [g * g for g in config.grid_sizes()])
    ranges = config.size_ranges()
    for k, b in enumerate(gts):
        side = max(b.w, b.h)
        lvl = next(i for i, (lo, hi) in enumerate(ranges) if lo <= side < hi)
        s = config.strides[lvl]
        g = config.grid_sizes()[lvl]
        cc = min(max(int(math.floor(b.cx / s)), 0), g - 1)
        rc = min(max(int(math.floor(b.cy / s)), 0), g - 1)
        for r in range(max(rc - 1, 0), min(rc + 2, g)):
            for c in range(max(cc - 1, 0), min(cc + 2, g)):
                idx = level_start[lvl] + r * g + c
                if b.area < best_area[idx]:
                    best_area[idx] = b.area
                    gt_index[idx] = k
    positive = gt_index >= 0
    encoded = np.zeros((n_loc, 4))
    if positive.any():
        g_arr = np.array([b.as_tuple() for b in gts], dtype=np.float64)[gt_index[positive]]
        s = stride[positive]
        encoded[positive, 0] = g_arr[:, 0] / s - col[positive]
        encoded[positive, 1] = g_arr[:, 1] / s - row[positive]
        encoded[positive, 2] = np.log(g_arr[:, 2] / s)
        encoded[positive, 3] = np.log(g_arr[:, 3] / s)
    return Targets(positive, encoded, gt_index)


def supervised_loss(out: HeadOutput, gts: Sequence[Sequence[Box]], config: DetectorConfig,
                    beta: float = 1.0) -> LossBreakdown:
    """BCE over every location plus smooth-L1 on positives, both normalised by the positive count.

    ``gts`` holds one box list per image in the batch.
    """
    if len(gts) != out.batch_size:
        raise ValueError(f"{len(gts)} target lists for a batch of {out.batch_size}")
    logits = out.flat_logits()
    reg = out.flat_reg()
    targets = [assign_targets(g, config) for g in gts]
    pos = torch.from_numpy(np.stack([t.positive for t in targets]))
    enc = torch.from_numpy(np.stack([t.encoded for t in targets])).to(reg.dtype)
    n_pos = max(1, int(pos.sum()))
    conf = F.binary_cross_entropy_with_logits(logits, pos.to(logits.dtype), reduction="sum") / n_pos
    if pos.any():
        reg_loss = smooth_l1(enc[pos], reg[pos]).sum() / n_pos
    else:
        reg_loss = reg.sum() * 0.0
    return total_loss(conf, reg_loss, beta)


def selfsup_loss(out: HeadOutput, labels: Sequence[Sequence[Box]], config: DetectorConfig,
                 ohem: OhemConfig, beta: float, loss: str = "ohem",
                 focal_alpha: float | None = 0.25, focal_gamma: float = 2.0) -> LossBreakdown:
    """Student loss against pseudo-labels, averaged over the images in the batch.

    ``loss="ohem"``: gated confidence loss averaged over the hard-example subset.
    ``loss="focal"``: focal loss averaged over all locations' positives count.
    Regression is smooth-L1 summed over the four coordinates, averaged over positives.
    """
    if loss not in ("ohem", "focal"):
        raise ValueError(f"unknown loss {loss!r}")
    logits = out.flat_logits()
    reg = out.flat_reg()
    conf_terms, reg_terms = [], []
    for i, boxes in enumerate(labels):
        t = assign_targets(boxes, config)
        pos = torch.from_numpy(t.positive)
        p = pos.to(logits.dtype)
        p_hat = torch.sigmoid(logits[i])
        if loss == "ohem":
            per = gated_conf_loss(p, p_hat, ohem)
            sel = select_hard_examples(per.detach().numpy(), np.flatnonzero(t.positive), ohem)
            conf_terms.append(per[torch.from_numpy(sel)].mean() if sel.size else per.sum() * 0.0)
        else:
            per = focal_conf_loss(p, p_hat, focal_alpha, focal_gamma)
            conf_terms.append(per.sum() / max(1, int(pos.sum())))
        if pos.any():
            enc = torch.from_numpy(t.encoded[t.positive]).to(reg.dtype)
            reg_terms.append(smooth_l1(enc, reg[i][pos]).sum(dim=1).mean())
        else:
            reg_terms.append(reg[i].sum() * 0.0)
    conf = torch.stack(conf_terms).mean()
    reg_loss = torch.stack(reg_terms).mean()
    return total_loss(conf, reg_loss, beta)
