"""Detection overlays and teacher/student AP curve figures."""

from __future__ import annotations

import logging
import warnings
from pathlib import Path
from typing import Mapping, Sequence

import cv2
import numpy as np

from .datapipe.coco import read_image
from .datapipe.imops import resize
from .detector import DetectorConfig, DetectorParams, predict
from .geometry import Klass
from .selfsup import read_curve_log

log = logging.getLogger(__name__)

COLORS = {Klass.FACE: (230, 40, 40), Klass.BODY: (40, 90, 230)}  # RGB


def draw_boxes(image: np.ndarray, detections: Mapping[Klass, Sequence], scale_x: float = 1.0,
               scale_y: float = 1.0, labels: bool = True) -> np.ndarray:
    """uint8 copy of ``image`` with one 1-px rectangle per detection."""
    canvas = np.ascontiguousarray(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
    h, w = canvas.shape[:2]
    for klass, dets in detections.items():
        for det in dets:
            x1, y1, x2, y2 = det.box.to_corner()
            p1 = (int(round(x1 * scale_x)), int(round(y1 * scale_y)))
            p2 = (min(w - 1, int(round(x2 * scale_x)) - 1), min(h - 1, int(round(y2 * scale_y)) - 1))
            cv2.rectangle(canvas, p1, p2, COLORS[klass], 1)
            if labels:
                ty = p1[1] - 3 if p1[1] >= 12 else p2[1] + 10
                if 0 <= ty < h:
                    cv2.putText(canvas, f"{klass.value} {det.score:.2f}", (p1[0], ty), cv2.FONT_HERSHEY_PLAIN,
                                0.7, COLORS[klass], 1)
    return canvas


def render_detections(params: DetectorParams, config: DetectorConfig, image_paths: Sequence, out_dir,
                      conf: float = 0.65, nms: float = 0.4, labels: bool = True) -> list[Path]:
    """Annotate each readable image; unreadable files are skipped with a warning.

    Images are resized to the detector input for inference and boxes are
    drawn back at the original resolution.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for path in map(Path, image_paths):
        try:
            image = read_image(path)
        except (OSError, ValueError) as exc:
            warnings.warn(f"cannot read {path}: {exc}")
            continue
        h, w = image.shape[:2]
        size = config.input_size
        dets = predict(params, resize(image, size, size), config, conf, nms)
        canvas = draw_boxes(image, dets, w / size, h / size, labels)
        target = out_dir / f"{path.stem}_det.png"
        cv2.imwrite(str(target), cv2.cvtColor(canvas, cv2.COLOR_RGB2BGR))
        written.append(target)
    return written


def plot_curves(curve_logs: Mapping[str, object], out_dir, prefix: str = "curves") -> list[Path]:
    """One PNG per AP column family (face, body, mean): teacher solid, student dashed, one colour per run.

    ``curve_logs`` maps a run label (e.g. ``phi=500``) to a curve-log path.
    Output bytes depend only on the logs.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    runs = {label: read_curve_log(path) for label, path in curve_logs.items()}
    if not runs or not any(runs.values()):
        raise ValueError("no curve records to plot")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    with plt.style.context("default"):
        for key in ("face", "body", "mean"):
            fig, ax = plt.subplots(figsize=(6, 4), dpi=100)
            for n, (label, rows) in enumerate(runs.items()):
                color = f"C{n % 10}"
                it = [int(r["iteration"]) for r in rows]
                for net, style in (("teacher", "-"), ("student", "--")):
                    col = f"{net}_{key}_ap"
                    ys = [float(r[col]) if r[col] else np.nan for r in rows]
                    ax.plot(it, ys, style, color=color, marker="o", ms=3, label=f"{label} {net}")
            ax.set_xlabel("iteration")
            ax.set_ylabel(f"{key} AP@0.5")
            ax.set_title(f"teacher vs student ({key})")
            ax.grid(alpha=0.3)
            ax.legend(fontsize=8)
            fig.tight_layout()
            target = out_dir / f"{prefix}_{key}.png"
            fig.savefig(target, metadata={"Software": None})
            plt.close(fig)
            written.append(target)
    return written
