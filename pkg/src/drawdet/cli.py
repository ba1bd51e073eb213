"""Command-line entry point: ``drawdet <verb> [options]``.

Exit codes: 0 success, 2 configuration error, 3 data error (missing or
malformed datasets/checkpoints), 4 numeric failure (non-finite loss or
gradient), 1 anything else.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from .checkpoint import CheckpointError, load_checkpoint
from .config import ConfigError, RunConfig, config_from_dict, load_config, load_grid
from .datapipe.coco import CorpusFormatError
from .evaluation import EvaluationError
from . import pipeline
from .selfsup import NumericError

EXIT_OK, EXIT_OTHER, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3, 4
OUTPUT_ROOT_ENV = "DRAWDET_OUTPUT_ROOT"

log = logging.getLogger("drawdet")


def output_dir(args, cfg: RunConfig | None = None) -> Path:
    """``--output-dir``, else the config's ``output_dir``; relative paths go under ``$DRAWDET_OUTPUT_ROOT`` if set."""
    raw = args.output_dir or (cfg.output_dir if cfg else "runs")
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _config(args, stage: str) -> RunConfig:
    cfg = load_config(args.config) if args.config else config_from_dict({"stage": stage})
    if cfg.stage != stage:
        try:
            cfg = replace(cfg, stage=stage)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _seeds(args, cfg: RunConfig) -> tuple[int, ...]:
    return (args.seed,) if args.seed is not None else cfg.seeds


def _run_dir(base: Path, seeds, seed) -> Path:
    return base if len(seeds) == 1 else base / f"seed_{seed}"


def _finished(run_dir: Path, args) -> bool:
    if args.resume and (run_dir / "best.ckpt").exists():
        log.info("resume: %s already finished", run_dir)
        return True
    return False


def cmd_gen_synthetic(args) -> int:
    cfg = _config(args, "gen-synthetic")
    if args.seed is not None:
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, seed=args.seed))
    paths = pipeline.generate_corpus(cfg, output_dir(args, cfg))
    for split, p in paths.items():
        print(f"{split}\t{p}")
    return EXIT_OK


def _cmd_train(stage: str, args) -> int:
    cfg = _config(args, stage)
    base = output_dir(args, cfg)
    seeds = _seeds(args, cfg)
    run = {"stage1": pipeline.run_stage1, "stage2": pipeline.run_stage2, "stage3": pipeline.run_stage3}[stage]
    for seed in seeds:
        run_dir = _run_dir(base, seeds, seed)
        if _finished(run_dir, args):
            continue
        result = run(cfg, seed, run_dir, init=args.init)
        if stage == "stage3":
            ckpt, report = result
            print(f"seed {seed}\tmean_ap {report.mean_ap:.4f}\t" +
                  "\t".join(f"{k} {v:.4f}" for k, v in sorted(report.per_class_ap.items())))
        else:
            ckpt = result
        print(f"seed {seed}\tcheckpoint {run_dir / 'best.ckpt'}\tbest_dev_ap {ckpt.meta.get('best_dev_ap')}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args, "eval")
    ckpt = load_checkpoint(args.checkpoint)
    if args.config is None:
        cfg = replace(cfg, detector=ckpt.config,
                      synthetic=replace(cfg.synthetic, sizes=replace(cfg.synthetic.sizes,
                                                                      image_size=ckpt.config.input_size)))
    if ckpt.config != cfg.detector:
        raise pipeline.DataError(f"checkpoint detector {ckpt.config} differs from config {cfg.detector}")
    report = pipeline.run_eval(cfg, ckpt.params, args.seed or 0, args.split)
    out = {"split": args.split or cfg.eval_split, "mean_ap": report.mean_ap, "per_class_ap": report.per_class_ap,
           "n_images": report.n_images}
    print(json.dumps(out, sort_keys=True))
    if args.output_dir:
        target = output_dir(args, cfg)
        target.mkdir(parents=True, exist_ok=True)
        (target / "eval.json").write_text(json.dumps(out, sort_keys=True, indent=1))
    return EXIT_OK


def cmd_grid(args) -> int:
    if not args.config:
        raise ConfigError("grid needs --config pointing at a grid file")
    grid = load_grid(args.config)
    if args.seed is not None:
        grid = replace(grid, base=replace(grid.base, seeds=(args.seed,)))
    rows = pipeline.run_experiment_grid(grid, output_dir(args, grid.base), resume=args.resume)
    for name, agg in rows:
        diff = "" if agg.ap_diff is None else f"{agg.ap_diff:.4f}"
        print(f"{name}\t{agg.mean:.4f}\t{agg.stddev:.4f}\t{diff}")
    return EXIT_OK


def cmd_render(args) -> int:
    from .viz import render_detections
    ckpt = load_checkpoint(args.checkpoint)
    written = render_detections(ckpt.params, ckpt.config, args.images, output_dir(args), args.conf, args.nms)
    for p in written:
        print(p)
    return EXIT_OK


def cmd_plot(args) -> int:
    from .viz import plot_curves
    logs = {}
    for item in args.curve_logs:
        label, sep, path = item.partition("=")
        logs[label if sep else Path(item).parent.name or Path(item).stem] = path if sep else item
    for p in plot_curves(logs, output_dir(args)):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="drawdet", description="Face/body detection in drawings: "
                                     "style-mixed pre-training, teacher-student self-training, fine-tuning.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, config_help="YAML run config"):
        p.add_argument("--config", help=config_help)
        p.add_argument("--seed", type=int, help="run a single seed instead of the config's seed list")
        p.add_argument("--output-dir", help=f"output directory (relative paths honour ${OUTPUT_ROOT_ENV})")
        p.add_argument("--resume", action="store_true", help="skip runs that already finished")
        return p

    p = common(sub.add_parser("gen-synthetic", help="write the synthetic corpus as detection JSON + PNGs"))
    p.set_defaults(func=cmd_gen_synthetic)
    for stage, text in (("stage1", "style-mixed supervised pre-training"),
                        ("stage2", "teacher-student self-training on unlabeled drawings"),
                        ("stage3", "fine-tuning on a labeled subset, then test AP")):
        p = common(sub.add_parser(stage, help=text))
        p.add_argument("--init", help="initial checkpoint path or 'random' (overrides the config's init)")
        p.set_defaults(func=lambda a, s=stage: _cmd_train(s, a))
    p = common(sub.add_parser("eval", help="AP@0.5 of a checkpoint on one split"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", help="dataset split (default: the config's eval_split)")
    p.set_defaults(func=cmd_eval)
    p = common(sub.add_parser("grid", help="run an experiment grid and write table.tsv"), "YAML grid file")
    p.set_defaults(func=cmd_grid)
    p = common(sub.add_parser("render", help="draw detections onto images"))
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--conf", type=float, default=0.65)
    p.add_argument("--nms", type=float, default=0.4)
    p.add_argument("images", nargs="+")
    p.set_defaults(func=cmd_render)
    p = common(sub.add_parser("plot", help="teacher/student AP curves from curve logs"))
    p.add_argument("curve_logs", nargs="+", help="curve.tsv paths, optionally as label=path")
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (pipeline.DataError, CorpusFormatError, CheckpointError, EvaluationError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
