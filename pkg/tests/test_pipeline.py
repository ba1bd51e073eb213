import csv

import numpy as np
import pytest
import torch

from drawdet import pipeline
from drawdet.checkpoint import load_checkpoint
from drawdet.config import ConfigError, ExperimentGrid, config_from_dict, load_config
from drawdet.datapipe.core import AnnotatedImage
from drawdet.evaluation import evaluate
from drawdet.geometry import Box


def tiny(**kw):
    base = {
        "detector": {"input_size": 64},
        "synthetic": {"seed": 1, "sizes": {"natural_train": 12, "drawing_unlabeled": 6, "drawing_labeled_train": 10,
                                           "drawing_dev": 4, "drawing_test": 4, "image_size": 64}},
        "epochs": 2, "batch_size": 4, "eval_every": 1, "seeds": [0],
        "selfsup": {"max_iterations": 6, "eval_interval": 3, "lr": 0.01},
    }
    for k, v in kw.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            base[k] = {**base[k], **v}
        else:
            base[k] = v
    return config_from_dict(base)


def test_fit_to_input_scales_boxes():
    item = AnnotatedImage(np.zeros((50, 100, 3), np.float32), [Box(50, 25, 10, 10)], [Box(20, 20, 20, 30)])
    out = pipeline.fit_to_input(item, 64)
    assert out.image.shape == (64, 64, 3)
    assert out.face_boxes[0].as_tuple() == pytest.approx((32.0, 32.0, 6.4, 12.8))


def test_stage1_zero_epochs_returns_init(tmp_path):
    cfg = tiny(epochs=0)
    ckpt = pipeline.run_stage1(cfg, 0, tmp_path)
    loaded = load_checkpoint(tmp_path / "best.ckpt")
    assert torch.equal(loaded.params.vector, pipeline.resolve_init(cfg, 0).vector)
    assert torch.equal(ckpt.params.vector, loaded.params.vector)
    assert (tmp_path / "config.yaml").exists()


def test_stage1_byte_identical_and_reproducible_from_echo(tmp_path):
    cfg = tiny()
    pipeline.run_stage1(cfg, 0, tmp_path / "a")
    pipeline.run_stage1(cfg, 0, tmp_path / "b")
    a = (tmp_path / "a" / "best.ckpt").read_bytes()
    assert a == (tmp_path / "b" / "best.ckpt").read_bytes()
    echo = load_config(tmp_path / "a" / "config.yaml")
    pipeline.run_stage1(echo, echo.seeds[0], tmp_path / "c")
    assert (tmp_path / "c" / "best.ckpt").read_bytes() == a
    rows = list(csv.DictReader(open(tmp_path / "a" / "epochs.tsv"), delimiter="\t"))
    assert [r["epoch"] for r in rows] == ["0", "1"]


def test_stage2_passthrough_and_curve_bookkeeping(tmp_path):
    s1 = pipeline.run_stage1(tiny(epochs=1), 0, tmp_path / "s1")
    cfg = tiny(stage="stage2", init=str(tmp_path / "s1" / "best.ckpt"), selfsup={"max_iterations": 0})
    out = pipeline.run_stage2(cfg, 0, tmp_path / "zero")
    assert torch.equal(out.params.vector, s1.params.vector)
    cfg = tiny(stage="stage2", init=str(tmp_path / "s1" / "best.ckpt"))
    pipeline.run_stage2(cfg, 0, tmp_path / "six")
    rows = list(csv.DictReader(open(tmp_path / "six" / "curve.tsv"), delimiter="\t"))
    assert [int(r["iteration"]) for r in rows] == [3, 6]


def test_stage2_requires_unlabeled_data(tmp_path):
    with pytest.raises(ConfigError):
        config_from_dict({"stage": "stage2", "datasets": {"drawing_dev": "synthetic"}})
    cfg = tiny(stage="stage2", datasets={"drawing_unlabeled": str(tmp_path / "nope.json")})
    with pytest.raises(pipeline.DataError):
        pipeline.run_stage2(cfg, 0, tmp_path / "x")


def test_stage3_zero_epochs_equals_direct_eval(tmp_path):
    cfg = tiny(stage="stage3", epochs=0)
    ckpt, report = pipeline.run_stage3(cfg, 0, tmp_path)
    direct = evaluate(pipeline.resolve_init(cfg, 0), pipeline.load_split(cfg, "drawing_test"), cfg.detector, 0)
    assert report.per_class_ap == direct.per_class_ap
    with pytest.raises(pipeline.DataError):
        pipeline.run_stage3(tiny(stage="stage3", subset_n=11), 0, tmp_path / "big")


def test_init_checkpoint_must_match_detector(tmp_path):
    pipeline.run_stage1(tiny(epochs=0), 0, tmp_path)
    cfg = config_from_dict({"detector": {"input_size": 96}, "synthetic": {"sizes": {"image_size": 96}},
                            "init": str(tmp_path / "best.ckpt")})
    with pytest.raises(pipeline.DataError):
        pipeline.resolve_init(cfg, 0)
    cfg = tiny(init=str(tmp_path / "missing-{seed}.ckpt"))
    with pytest.raises(pipeline.DataError, match="missing-3"):
        pipeline.resolve_init(cfg, 3)


def test_coco_datasets_flow_through(tmp_path):
    cfg = tiny(stage="gen-synthetic")
    paths = pipeline.generate_corpus(cfg, tmp_path / "corpus")
    from_files = tiny(datasets={k: str(v) for k, v in paths.items()})
    a = pipeline.load_split(from_files, "drawing_dev")
    b = pipeline.load_split(tiny(), "drawing_dev")
    assert [x.id for x in a] == [x.id for x in b]
    assert all(np.array_equal(x.image, y.image) for x, y in zip(a, b))


def _grid(axes):
    return ExperimentGrid(tiny(stage="stage1", epochs=1, eval_split="drawing_dev", seeds=[0, 1]), axes)


def test_one_point_grid_matches_direct_run(tmp_path):
    rows = pipeline.run_experiment_grid(_grid({}), tmp_path / "g")
    assert [n for n, _ in rows] == ["base"]
    cfg = _grid({}).base
    direct = [pipeline.run_eval(cfg, pipeline.run_stage1(cfg, s, tmp_path / f"d{s}").params, s) for s in (0, 1)]
    assert rows[0][1].mean == pytest.approx(np.mean([r.mean_ap for r in direct]), abs=1e-15)
    assert rows[0][1].ap_diff == 0.0


def test_grid_order_and_resume_equivalence(tmp_path, monkeypatch):
    axes = {"style_bank.mode": ["none", "all"], "lr": [0.003, 0.01]}
    full = pipeline.run_experiment_grid(_grid(axes), tmp_path / "full")
    assert [n for n, _ in full] == ["style_bank.mode=none__lr=0.003", "style_bank.mode=none__lr=0.01",
                                    "style_bank.mode=all__lr=0.003", "style_bank.mode=all__lr=0.01"]
    table = (tmp_path / "full" / "table.tsv").read_text()

    calls = {"n": 0}
    real = pipeline.run_point

    def flaky(*a, **k):
        calls["n"] += 1
        if calls["n"] == 4:
            raise KeyboardInterrupt
        return real(*a, **k)

    monkeypatch.setattr(pipeline, "run_point", flaky)
    with pytest.raises(KeyboardInterrupt):
        pipeline.run_experiment_grid(_grid(axes), tmp_path / "resumed")
    monkeypatch.setattr(pipeline, "run_point", real)
    done = sorted(p.parent.name for p in (tmp_path / "resumed").rglob("done.json"))
    assert len(done) == 3
    rerun = {"n": 0}

    def counting(*a, **k):
        rerun["n"] += 1
        return real(*a, **k)

    monkeypatch.setattr(pipeline, "run_point", counting)
    resumed = pipeline.run_experiment_grid(_grid(axes), tmp_path / "resumed", resume=True)
    assert rerun["n"] == 5
    assert (tmp_path / "resumed" / "table.tsv").read_text() == table
    assert [(n, a.mean, a.ap_diff) for n, a in resumed] == [(n, a.mean, a.ap_diff) for n, a in full]
