import pytest
import yaml

from drawdet.config import (ConfigError, ExperimentGrid, RunConfig, config_from_dict, dump_config, load_config,
                            load_grid, override)


def test_defaults_are_desk_scale():
    cfg = RunConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.selfsup.max_iterations) == (30, 8, 2000)
    assert cfg.selfsup.phi == 500 and cfg.selfsup.d == 0.9996 and cfg.selfsup.beta == 2.0
    assert cfg.selfsup.c_teac == 0.65 and cfg.selfsup.pseudo_nms_thresh == 0.4
    assert cfg.augmentation.color_shift_range == (-20.0, 20.0)


def test_full_scale_budgets_reachable():
    cfg = config_from_dict({"epochs": 350, "batch_size": 16, "lr": 0.001, "no_aug_epochs": 15,
                            "selfsup": {"max_iterations": 10000, "lr": 0.0001}})
    assert cfg.selfsup.lr == 0.0001 and cfg.epochs == 350


@pytest.mark.parametrize("data", [
    {"epoch": 3},
    {"selfsup": {"phi": 500, "dd": 0.9}},
    {"synthetic": {"sizes": {"natural": 10}}},
    {"detector": {"input_size": 100}},
    {"stage": "stage9"},
    {"batch_size": 0},
    {"subset_n": "most"},
    {"datasets": {"comics": "synthetic"}},
    {"style_bank": {"mode": "single", "slots": ["picasso"]}},
    {"detector": {"input_size": 64}},  # synthetic rasters must match the detector input
    {"stage": "stage3", "datasets": {"natural_train": "synthetic"}},
    {"selfsup": 3},
])
def test_invalid_configs_rejected(data):
    with pytest.raises(ConfigError):
        config_from_dict(data)


def test_echo_roundtrip(tmp_path):
    cfg = config_from_dict({"stage": "stage2", "selfsup": {"phi": "never", "d": 0.99}, "seeds": [3],
                            "style_bank": {"mode": "top_k", "slots": ["kh", "as"]}, "subset_n": 64})
    again = load_config(dump_config(cfg, tmp_path / "c.yaml"))
    assert again == cfg


def test_load_config_errors(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("epochs: [unclosed")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")


def test_override_and_grid_points():
    base = RunConfig(seeds=(0,))
    assert override(base, "selfsup.phi", "never").selfsup.phi == "never"
    with pytest.raises(ConfigError):
        override(base, "selfsup.nope", 1)
    grid = ExperimentGrid(base, {"selfsup.phi": [500, "never"], "selfsup.beta": [1.0, 2.0]})
    pts = grid.points()
    assert [n for n, _ in pts] == ["selfsup.phi=500__selfsup.beta=1.0", "selfsup.phi=500__selfsup.beta=2.0",
                                   "selfsup.phi=never__selfsup.beta=1.0", "selfsup.phi=never__selfsup.beta=2.0"]
    assert [(c.selfsup.phi, c.selfsup.beta) for _, c in pts] == [(500, 1.0), (500, 2.0), ("never", 1.0),
                                                                  ("never", 2.0)]
    assert ExperimentGrid(base).points()[0] == ("base", base)
    big = ExperimentGrid(base, {"seeds": [[i] for i in range(10)], "lr": [0.1 * i for i in range(1, 10)]}, limit=50)
    with pytest.raises(ConfigError, match="90 points"):
        big.points()


def test_load_grid(tmp_path):
    p = tmp_path / "g.yaml"
    p.write_text(yaml.safe_dump({"base": {"stage": "stage2"}, "axes": {"selfsup.d": [0.99, 0.9996]}, "limit": 4}))
    grid = load_grid(p)
    assert grid.size == 2 and grid.limit == 4 and grid.base.stage == "stage2"
    p.write_text(yaml.safe_dump({"base": {}, "axis": {}}))
    with pytest.raises(ConfigError):
        load_grid(p)
