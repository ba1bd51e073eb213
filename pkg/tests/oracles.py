"""Independent brute-force reference implementations used by the tests.

Nothing here imports the code under test beyond the plain data types.
"""

from __future__ import annotations

import math


def corner(b):
    return (b.cx - b.w / 2, b.cy - b.h / 2, b.cx + b.w / 2, b.cy + b.h / 2)


def iou_scalar(a, b):
    ax1, ay1, ax2, ay2 = corner(a)
    bx1, by1, bx2, by2 = corner(b)
    iw = max(0.0, min(ax2, bx2) - max(ax1, bx1))
    ih = max(0.0, min(ay2, by2) - max(ay1, by1))
    inter = iw * ih
    union = (ax2 - ax1) * (ay2 - ay1) + (bx2 - bx1) * (by2 - by1) - inter
    return inter / union


def greedy_nms(cands, thresh):
    """Repeatedly take the best remaining box and discard everything overlapping it."""
    remaining = sorted(range(len(cands)), key=lambda i: (-cands[i].score, i))
    kept = []
    while remaining:
        best = remaining.pop(0)
        kept.append(best)
        remaining = [i for i in remaining if iou_scalar(cands[best].box, cands[i].box) <= thresh]
    return [cands[i] for i in kept]


def greedy_match(preds, gts, thresh=0.5):
    """Replay of single-match greedy assignment, one prediction at a time."""
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    used = set()
    out = []
    for i in order:
        best_j, best_iou = None, -1.0
        for j, g in enumerate(gts):
            if j in used:
                continue
            v = iou_scalar(preds[i].box, g)
            if v > best_iou:
                best_j, best_iou = j, v
        if best_j is not None and best_iou >= thresh:
            used.add(best_j)
            out.append((i, True))
        else:
            out.append((i, False))
    return out


def ap_by_prefix_enumeration(flags, n_gt):
    """AP from explicit rank prefixes: for each recall level reached, the best
    precision over every prefix whose recall is at least that level."""
    prefixes = []
    tp = 0
    for k, hit in enumerate(flags, start=1):
        tp += hit
        prefixes.append((tp / n_gt, tp / k))
    ap, prev_recall = 0.0, 0.0
    for r, _ in prefixes:
        if r > prev_recall:
            best_p = max(p for rr, p in prefixes if rr >= r)
            ap += (r - prev_recall) * best_p
            prev_recall = r
    return ap


def sigmoid(x):
    return 1.0 / (1.0 + math.exp(-x)) if x >= 0 else math.exp(x) / (1.0 + math.exp(x))
