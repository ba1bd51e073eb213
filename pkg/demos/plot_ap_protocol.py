"""
AP@0.5 by hand
==============

Greedy single-match assignment and all-points interpolated AP on a toy
two-image example, followed by the mean/std aggregation used for reports.
"""

from drawdet.evaluation import APReport, aggregate_runs, average_precision, match_detections
from drawdet.geometry import Box, Klass, ScoredBox

gts = {
    "img0": [Box(20, 20, 10, 10), Box(60, 60, 20, 20)],
    "img1": [Box(30, 40, 16, 16)],
}
preds = {
    "img0": [ScoredBox(Box(21, 20, 10, 10), 0.9, Klass.FACE),   # hit
             ScoredBox(Box(20, 21, 10, 10), 0.8, Klass.FACE),   # duplicate: gt already taken
             ScoredBox(Box(90, 10, 8, 8), 0.4, Klass.FACE)],    # nothing there
    "img1": [ScoredBox(Box(30, 41, 15, 16), 0.7, Klass.FACE)],  # hit
}

# per-image matching, highest score first
for img in preds:
    print(img, match_detections(preds[img], gts[img]))

# ranked over both images: TP 0.9, FP 0.8, TP 0.7, FP 0.4; one gt never found
ap = average_precision(preds, gts)
print(f"AP@0.5 = {ap:.4f}")

# five seeds of a made-up experiment, reported as mean and population std
reports = [APReport({"face": a, "body": b}, (a + b) / 2, 64, s)
           for s, (a, b) in enumerate([(0.61, 0.40), (0.64, 0.38), (0.60, 0.43), (0.66, 0.41), (0.62, 0.39)])]
agg = aggregate_runs(reports)
print(f"mean AP {agg.mean:.4f} +- {agg.stddev:.4f} over {agg.n_runs} runs", agg.per_class_mean)
