"""Stage orchestration: data loading, the three training stages, evaluation
and resumable experiment grids.  Every run directory gets a config echo."""

from __future__ import annotations

import csv
import functools
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import SYNTHETIC, ExperimentGrid, RunConfig, dump_config
from .datapipe.augment import scale_labels
from .datapipe.coco import load_coco_annotations, filter_small_faces, write_coco
from .datapipe.core import AnnotatedImage
from .datapipe.imops import resize
from .datapipe.sampling import subset_sampler
from .datapipe.synthetic import SPLITS, generate_split
from .detector import DetectorConfig, DetectorParams, init_params
from .evaluation import APReport, AggregateReport, aggregate_runs, best_per_key, evaluate, write_report_table
from .selfsup import CurveRecord, run_stage2 as selfsup_run_stage2, write_curve_log
from .training import EpochRecord, train_supervised

log = logging.getLogger(__name__)

DONE_MARKER = "done.json"


class DataError(ValueError):
    """A dataset or checkpoint needed by a run is missing or unusable."""


def fit_to_input(item: AnnotatedImage, size: int) -> AnnotatedImage:
    """Resize to ``size`` x ``size`` (aspect not kept), scaling boxes alike."""
    if item.height == size and item.width == size:
        return item
    labels = scale_labels(item.labels(), size / item.width, size / item.height, size, size)
    return item.with_content(resize(item.image, size, size), labels)


@functools.lru_cache(maxsize=16)
def _synthetic_split(split: str, n: int, size: int, seed: int) -> tuple:
    return tuple(generate_split(split, n, size, seed))


def load_split(cfg: RunConfig, split: str) -> list[AnnotatedImage]:
    source = cfg.datasets.get(split)
    if source is None:
        raise DataError(f"no dataset configured for {split!r}")
    size = cfg.detector.input_size
    if source == SYNTHETIC:
        items = list(_synthetic_split(split, getattr(cfg.synthetic.sizes, split), size, cfg.synthetic.seed))
    else:
        path = Path(source)
        if not path.exists():
            raise DataError(f"{split}: annotation file {path} not found")
        kind = "natural" if split == "natural_train" else "drawing"
        items = load_coco_annotations(path, path.parent, source=kind, include_animals=cfg.include_animals)
        if split == "natural_train":
            items = filter_small_faces(items, cfg.min_face_ratio)
        items = [fit_to_input(x, size) for x in items]
    if not items:
        raise DataError(f"{split}: dataset is empty")
    return items


def load_optional(cfg: RunConfig, split: str) -> list[AnnotatedImage] | None:
    return load_split(cfg, split) if split in cfg.datasets else None


def resolve_init(cfg: RunConfig, seed: int, init: str | None = None) -> DetectorParams:
    init = init if init is not None else cfg.init_for(seed)
    if init == "random":
        return init_params(cfg.detector, seed)
    path = Path(init)
    if not path.exists():
        raise DataError(f"init checkpoint {path} not found")
    ckpt = load_checkpoint(path)
    if ckpt.config != cfg.detector:
        raise DataError(f"checkpoint {path} was built for {ckpt.config}, run expects {cfg.detector}")
    return ckpt.params


def _prepare(cfg: RunConfig, seed: int, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_config(replace(cfg, seeds=(seed,), output_dir=str(out)), out / "config.yaml")
    return out


def _epoch_logger(path: Path):
    with open(path, "w", newline="") as fh:
        csv.writer(fh, delimiter="\t", lineterminator="\n").writerow(("epoch", "loss", "face_ap", "body_ap"))

    def log_epoch(rec: EpochRecord):
        ap = rec.dev_ap or {}
        with open(path, "a", newline="") as fh:
            csv.writer(fh, delimiter="\t", lineterminator="\n").writerow(
                (rec.epoch, f"{rec.loss:.6f}", *(f"{ap[k]:.6f}" if k in ap else "" for k in ("face", "body"))))
    return log_epoch


def run_stage1(cfg: RunConfig, seed: int, out_dir, init: str | None = None) -> Checkpoint:
    """Style-mixed supervised pre-training; writes ``best.ckpt`` and ``epochs.tsv``."""
    out = _prepare(cfg, seed, out_dir)
    result = train_supervised(
        resolve_init(cfg, seed, init), load_split(cfg, "natural_train"), cfg.detector,
        epochs=cfg.epochs, batch_size=cfg.batch_size, lr=cfg.lr, seed=seed, style_bank=cfg.style_bank.build(),
        policy=cfg.augmentation, no_aug_epochs=cfg.no_aug_epochs, dev=load_optional(cfg, "drawing_dev"),
        eval_every=cfg.eval_every, beta=cfg.supervised_beta, stage="stage1", on_epoch=_epoch_logger(out / "epochs.tsv"))
    save_checkpoint(out / "best.ckpt", result.best)
    return result.best


def dev_evaluator(cfg: RunConfig, dev: Sequence[AnnotatedImage] | None):
    if not dev:
        return None
    return lambda params: evaluate(params, dev, cfg.detector).per_class_ap


def run_stage2(cfg: RunConfig, seed: int, out_dir, init: str | None = None) -> Checkpoint:
    """Teacher-student self-training; writes ``best.ckpt`` (teacher) and ``curve.tsv``."""
    out = _prepare(cfg, seed, out_dir)
    curve_path = out / "curve.tsv"
    write_curve_log([], curve_path)

    def on_record(rec: CurveRecord):
        write_curve_log([rec], curve_path, append=True)

    res = selfsup_run_stage2(resolve_init(cfg, seed, init), load_split(cfg, "drawing_unlabeled"),
                             replace(cfg.selfsup, seed=seed), cfg.detector,
                             dev_evaluator(cfg, load_optional(cfg, "drawing_dev")), cfg.augmentation, on_record)
    save_checkpoint(out / "best.ckpt", res.best)
    return res.best


def run_stage3(cfg: RunConfig, seed: int, out_dir, init: str | None = None) -> tuple[Checkpoint, APReport]:
    """Fine-tune on ``subset_n`` labeled drawings and report test AP; writes ``best.ckpt`` and ``report.json``."""
    out = _prepare(cfg, seed, out_dir)
    labeled = load_split(cfg, "drawing_labeled_train")
    try:
        train = subset_sampler(labeled, cfg.subset_n, seed)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    result = train_supervised(
        resolve_init(cfg, seed, init), train, cfg.detector, epochs=cfg.epochs, batch_size=cfg.batch_size,
        lr=cfg.lr, seed=seed, policy=cfg.augmentation, no_aug_epochs=cfg.no_aug_epochs,
        dev=load_optional(cfg, "drawing_dev"), eval_every=cfg.eval_every, beta=cfg.supervised_beta, stage="stage3",
        on_epoch=_epoch_logger(out / "epochs.tsv"))
    save_checkpoint(out / "best.ckpt", result.best)
    report = evaluate(result.best.params, load_split(cfg, "drawing_test"), cfg.detector, seed)
    _write_report(out / "report.json", report)
    return result.best, report


def run_eval(cfg: RunConfig, params: DetectorParams, seed: int = 0, split: str | None = None) -> APReport:
    return evaluate(params, load_split(cfg, split or cfg.eval_split), cfg.detector, seed)


def generate_corpus(cfg: RunConfig, out_dir) -> dict[str, Path]:
    """Write every synthetic split as ``<out>/<split>/annotations.json`` plus PNGs."""
    out = Path(out_dir)
    paths = {}
    for split in SPLITS:
        n = getattr(cfg.synthetic.sizes, split)
        items = generate_split(split, n, cfg.synthetic.sizes.image_size, cfg.synthetic.seed)
        paths[split] = write_coco(items, out / split / "annotations.json")
    dump_config(cfg, out / "config.yaml")
    return paths


def _write_report(path: Path, report: APReport):
    path.write_text(json.dumps({"per_class_ap": report.per_class_ap, "mean_ap": report.mean_ap,
                                "n_images": report.n_images, "run_seed": report.run_seed}, sort_keys=True, indent=1))


def _read_report(path: Path) -> APReport:
    d = json.loads(path.read_text())
    return APReport(d["per_class_ap"], d["mean_ap"], d["n_images"], d["run_seed"])


def run_point(cfg: RunConfig, seed: int, out_dir) -> APReport:
    """Run ``cfg.stage`` for one seed and score the resulting checkpoint on ``cfg.eval_split``."""
    out = Path(out_dir)
    if cfg.stage == "stage1":
        params = run_stage1(cfg, seed, out).params
    elif cfg.stage == "stage2":
        params = run_stage2(cfg, seed, out).params
    elif cfg.stage == "stage3":
        params = run_stage3(cfg, seed, out)[0].params
    elif cfg.stage == "eval":
        _prepare(cfg, seed, out)
        params = resolve_init(cfg, seed)
    else:
        raise ValueError(f"stage {cfg.stage!r} cannot be part of a grid")
    return run_eval(cfg, params, seed)


def run_experiment_grid(grid: ExperimentGrid, out_dir, resume: bool = False) -> list[tuple[str, AggregateReport]]:
    """One aggregate row per grid point, in grid order, with AP differences to the per-class best.

    Each (point, seed) run lives in ``<out>/<point>/seed_<k>`` and leaves a
    completion marker; with ``resume`` finished runs are read back instead of
    recomputed.  The table goes to ``<out>/table.tsv``.
    """
    points = grid.points()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    per_point = []
    for name, cfg in points:
        reports = []
        for seed in cfg.seeds:
            run_dir = out / name / f"seed_{seed}"
            marker = run_dir / DONE_MARKER
            if resume and marker.exists():
                reports.append(_read_report(marker))
                continue
            report = run_point(cfg, seed, run_dir)
            _write_report(marker, report)
            reports.append(report)
        per_point.append((name, reports))
    plain = [aggregate_runs(r) for _, r in per_point]
    best = best_per_key(plain)
    rows = [(name, aggregate_runs(r, best)) for name, r in per_point]
    write_report_table([(points[0][1].eval_split, name, agg) for name, agg in rows], out / "table.tsv")
    return rows
