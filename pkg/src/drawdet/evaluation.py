"""AP at IoU 0.5 with greedy single-match assignment, plus multi-run aggregation."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch

from .detector import DetectorConfig, DetectorParams, predict_batch, to_batch
from .geometry import KLASSES, Box, ContractError, Klass, ScoredBox, boxes_to_array, iou_matrix

IOU_THRESH = 0.5
EVAL_CONF = 0.01
EVAL_NMS = 0.5
EVAL_MAX_DETS = 100


class EvaluationError(ValueError):
    pass


def match_detections(preds: Sequence[ScoredBox], gts: Sequence[Box],
                     iou_thresh: float = IOU_THRESH) -> list[tuple[int, bool]]:
    """Greedy matching in descending score order (ties keep input order).

    Each prediction takes the unmatched ground-truth box with the highest IoU,
    provided it reaches ``iou_thresh``; otherwise it is a false positive.
    Returns ``(pred_index, matched)`` in processing order.
    """
    if len({p.klass for p in preds}) > 1:
        raise ContractError("match_detections expects predictions of one class")
    order = np.argsort(-np.array([p.score for p in preds], dtype=np.float64), kind="stable")
    if not gts:
        return [(int(i), False) for i in order]
    ious = iou_matrix(boxes_to_array(p.box for p in preds), boxes_to_array(gts)) if preds else None
    taken = np.zeros(len(gts), dtype=bool)
    out = []
    for i in order:
        row = np.where(taken, -1.0, ious[i])
        j = int(np.argmax(row))
        if row[j] >= iou_thresh:
            taken[j] = True
            out.append((int(i), True))
        else:
            out.append((int(i), False))
    return out


def average_precision(all_preds: Mapping[str, Sequence[ScoredBox]], all_gts: Mapping[str, Sequence[Box]],
                      iou_thresh: float = IOU_THRESH) -> float:
    """All-points interpolated AP over the pooled ranking.

    ``all_preds`` and ``all_gts`` are keyed by image id.  The global ranking
    orders by score, then image id, then prediction index.
    """
    n_gt = sum(len(v) for v in all_gts.values())
    if n_gt == 0:
        raise EvaluationError("AP is undefined without ground-truth boxes")
    records = []
    for img_id, preds in all_preds.items():
        for idx, hit in match_detections(preds, all_gts.get(img_id, []), iou_thresh):
            records.append((-preds[idx].score, str(img_id), idx, hit))
    if not records:
        return 0.0
    records.sort(key=lambda r: (r[0], r[1], r[2]))
    hits = np.array([r[3] for r in records], dtype=np.float64)
    tp = np.cumsum(hits)
    fp = np.cumsum(1.0 - hits)
    recall = tp / n_gt
    precision = tp / (tp + fp)
    return interpolated_ap(recall, precision)


def interpolated_ap(recall: np.ndarray, precision: np.ndarray) -> float:
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    steps = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[steps + 1] - mrec[steps]) * mpre[steps + 1]))


@dataclass
class APReport:
    per_class_ap: dict[str, float]
    mean_ap: float
    n_images: int
    run_seed: int = 0

    def __post_init__(self):
        for v in list(self.per_class_ap.values()) + [self.mean_ap]:
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"AP {v} outside [0, 1]")


@dataclass
class AggregateReport:
    mean: float
    stddev: float
    n_runs: int
    ap_diff: float | None = None
    per_class_mean: dict[str, float] = field(default_factory=dict)


@torch.no_grad()
def detect_dataset(params: DetectorParams, dataset, config: DetectorConfig, conf_thresh: float = EVAL_CONF,
                   nms_thresh: float = EVAL_NMS, max_dets: int = EVAL_MAX_DETS, batch_size: int = 32):
    """Predictions keyed by image id: ``{id: {klass: [ScoredBox]}}``."""
    out = {}
    for start in range(0, len(dataset), batch_size):
        chunk = dataset[start:start + batch_size]
        preds = predict_batch(params, to_batch([x.image for x in chunk]), config, conf_thresh, nms_thresh, max_dets)
        for item, p in zip(chunk, preds):
            out[item.id] = p
    return out


def evaluate(params: DetectorParams, dataset, config: DetectorConfig, run_seed: int = 0,
             classes: Sequence[Klass] = KLASSES) -> APReport:
    """Per-class AP@0.5 over ``dataset``; classes without ground truth are left out of the mean."""
    if not dataset:
        raise EvaluationError("cannot evaluate on an empty dataset")
    dets = detect_dataset(params, dataset, config)
    per_class = {}
    for klass in classes:
        gts = {x.id: x.boxes(klass) for x in dataset}
        if sum(len(v) for v in gts.values()) == 0:
            continue
        per_class[klass.value] = average_precision({k: v[klass] for k, v in dets.items()}, gts)
    if not per_class:
        raise EvaluationError("dataset has no ground-truth boxes")
    return APReport(per_class, float(np.mean(list(per_class.values()))), len(dataset), run_seed)


def aggregate_runs(reports: Sequence[APReport], best_per_dataset: Mapping[str, float] | None = None) -> AggregateReport:
    """Mean and population stddev of ``mean_ap`` across runs.

    With ``best_per_dataset`` (best score per dataset/class key), ``ap_diff`` is
    the average over keys of best minus this experiment's run-mean.
    """
    if not reports:
        raise EvaluationError("no reports to aggregate")
    vals = np.array([r.mean_ap for r in reports], dtype=np.float64)
    keys = sorted({k for r in reports for k in r.per_class_ap})
    per_class = {k: float(np.mean([r.per_class_ap[k] for r in reports if k in r.per_class_ap])) for k in keys}
    ap_diff = None
    if best_per_dataset:
        missing = set(best_per_dataset) - set(per_class)
        if missing:
            raise EvaluationError(f"no scores for {sorted(missing)}")
        ap_diff = float(np.mean([best_per_dataset[k] - per_class[k] for k in best_per_dataset]))
    return AggregateReport(float(vals.mean()), float(vals.std()), len(reports), ap_diff, per_class)


def best_per_key(aggregates: Sequence[AggregateReport]) -> dict[str, float]:
    best: dict[str, float] = {}
    for agg in aggregates:
        for k, v in agg.per_class_mean.items():
            best[k] = max(best.get(k, -math.inf), v)
    return best


REPORT_HEADER = ("dataset", "variant", "n_runs", "mean_ap", "stddev", "ap_diff", "face_ap", "body_ap")


def write_report_table(rows: Sequence[tuple[str, str, AggregateReport]], path) -> Path:
    """Tab-separated table, one row per (dataset, variant)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(REPORT_HEADER)
        for dataset, variant, agg in rows:
            w.writerow([dataset, variant, agg.n_runs, f"{agg.mean:.6f}", f"{agg.stddev:.6f}",
                        "" if agg.ap_diff is None else f"{agg.ap_diff:.6f}",
                        _fmt(agg.per_class_mean.get("face")), _fmt(agg.per_class_mean.get("body"))])
    return path


def _fmt(v):
    return "" if v is None else f"{v:.6f}"
