"""Run and experiment-grid configuration loaded from YAML.

Every section is validated against its dataclass; unknown keys are errors.
Defaults are desk-scale.  Full-scale budgets are reachable by config:
``epochs: 350``, ``batch_size: 16``, ``lr: 0.001``, ``selfsup.max_iterations:
10000``, ``selfsup.lr: 0.0001``, ``no_aug_epochs: 15``.
"""

from __future__ import annotations

import copy
import dataclasses
import itertools
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .datapipe.augment import AugmentationPolicy
from .datapipe.styles import MODES, STYLE_SLOTS, StyleBank
from .datapipe.synthetic import SPLITS, CorpusSizes
from .detector import DetectorConfig
from .selfsup import SelfSupConfig

STAGES = ("stage1", "stage2", "stage3", "eval", "gen-synthetic")
SYNTHETIC = "synthetic"
DEFAULT_GRID_LIMIT = 64

# datasets each stage cannot run without
REQUIRED_SPLITS = {
    "stage1": ("natural_train",),
    "stage2": ("drawing_unlabeled",),
    "stage3": ("drawing_labeled_train", "drawing_test"),
    "eval": (),
    "gen-synthetic": (),
}


class ConfigError(ValueError):
    """Invalid or unknown configuration."""


@dataclass(frozen=True)
class StyleSpec:
    mode: str = "all"
    slots: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "slots", tuple(self.slots))
        if self.mode not in MODES:
            raise ValueError(f"style mode must be one of {MODES}, got {self.mode!r}")
        unknown = set(self.slots) - set(STYLE_SLOTS)
        if unknown:
            raise ValueError(f"unknown style slots {sorted(unknown)}")

    def build(self) -> StyleBank:
        return StyleBank.from_spec(self.mode, self.slots or None)


@dataclass(frozen=True)
class SyntheticSpec:
    seed: int = 0
    sizes: CorpusSizes = CorpusSizes(image_size=128)


@dataclass(frozen=True)
class RunConfig:
    stage: str = "stage1"
    detector: DetectorConfig = DetectorConfig(input_size=128)
    selfsup: SelfSupConfig = SelfSupConfig(lr=1e-2, max_iterations=2000, eval_interval=250)
    augmentation: AugmentationPolicy = AugmentationPolicy()
    style_bank: StyleSpec = StyleSpec()
    synthetic: SyntheticSpec = SyntheticSpec()
    # split name -> "synthetic" or a detection-JSON path (images resolved next to it)
    datasets: dict = field(default_factory=lambda: {s: SYNTHETIC for s in SPLITS})
    init: str = "random"  # "random" or a checkpoint path; "{seed}" is substituted
    subset_n: int | str = "all"
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    epochs: int = 30
    batch_size: int = 8
    lr: float = 3e-3
    no_aug_epochs: int = 1
    eval_every: int = 2
    supervised_beta: float = 1.0
    include_animals: bool = True
    min_face_ratio: float = 0.02
    eval_split: str = "drawing_test"
    output_dir: str = "runs"

    def __post_init__(self):
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0 or self.no_aug_epochs < 0 or self.eval_every < 1:
            raise ValueError("epochs/no_aug_epochs must be >= 0 and eval_every >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if not (self.subset_n == "all" or (isinstance(self.subset_n, int) and self.subset_n >= 1)):
            raise ValueError(f"subset_n must be a positive integer or 'all', got {self.subset_n!r}")
        unknown = set(self.datasets) - set(SPLITS)
        if unknown:
            raise ValueError(f"unknown dataset roles {sorted(unknown)}; expected {SPLITS}")
        missing = [s for s in REQUIRED_SPLITS[self.stage] if s not in self.datasets]
        if missing:
            raise ValueError(f"{self.stage} needs datasets {missing}")
        if self.eval_split not in SPLITS:
            raise ValueError(f"eval_split must be one of {SPLITS}")
        if self.synthetic.sizes.image_size != self.detector.input_size and any(
                v == SYNTHETIC for v in self.datasets.values()):
            raise ValueError("synthetic.sizes.image_size must equal detector.input_size")

    def init_for(self, seed: int) -> str:
        return self.init.replace("{seed}", str(seed))

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


_NESTED = {
    (RunConfig, "detector"): DetectorConfig,
    (RunConfig, "selfsup"): SelfSupConfig,
    (RunConfig, "augmentation"): AugmentationPolicy,
    (RunConfig, "style_bank"): StyleSpec,
    (RunConfig, "synthetic"): SyntheticSpec,
    (SyntheticSpec, "sizes"): CorpusSizes,
}


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown key(s) {unknown}; allowed: {sorted(known)}")
    kwargs = {}
    for key, value in data.items():
        sub = _NESTED.get((cls, key))
        path = f"{where}.{key}" if where else key
        kwargs[key] = _build(sub, value, path) if sub else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: Mapping[str, Any] | None) -> RunConfig:
    return _build(RunConfig, data or {}, "")


def load_config(path) -> RunConfig:
    try:
        data = yaml.safe_load(Path(path).read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: RunConfig, path) -> Path:
    """Write the config echo; :func:`load_config` on it gives back ``cfg``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path


def override(cfg: RunConfig, dotted: str, value) -> RunConfig:
    """Copy of ``cfg`` with one dotted key replaced, re-validated."""
    data = cfg.to_dict()
    node = data
    *parents, leaf = dotted.split(".")
    for p in parents:
        if not isinstance(node.get(p), dict):
            raise ConfigError(f"{dotted}: {p!r} is not a config section")
        node = node[p]
    if leaf not in node:
        raise ConfigError(f"{dotted}: unknown key")
    node[leaf] = copy.deepcopy(value)
    return config_from_dict(data)


@dataclass(frozen=True)
class ExperimentGrid:
    base: RunConfig
    axes: tuple[tuple[str, tuple], ...] = ()
    limit: int = DEFAULT_GRID_LIMIT

    def __post_init__(self):
        object.__setattr__(self, "axes", tuple((k, tuple(v)) for k, v in
                                              (self.axes.items() if isinstance(self.axes, dict) else self.axes)))
        for k, v in self.axes:
            if not v:
                raise ConfigError(f"grid axis {k!r} has no values")

    @property
    def size(self) -> int:
        n = 1
        for _, v in self.axes:
            n *= len(v)
        return n

    def points(self) -> list[tuple[str, RunConfig]]:
        """Cartesian product in axis order, last axis fastest.  Names are stable and filesystem-safe."""
        if self.size > self.limit:
            raise ConfigError(f"grid has {self.size} points, above the limit of {self.limit}")
        keys = [k for k, _ in self.axes]
        out = []
        for combo in itertools.product(*(v for _, v in self.axes)):
            cfg = self.base
            for k, v in zip(keys, combo):
                cfg = override(cfg, k, v)
            name = "__".join(f"{k}={v}" for k, v in zip(keys, combo)) or "base"
            out.append((name.replace("/", "_"), cfg))
        return out


def load_grid(path) -> ExperimentGrid:
    """YAML with ``base`` (a run config), ``axes`` (dotted key -> list) and optional ``limit``."""
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read grid {path}: {exc}") from exc
    unknown = sorted(set(data) - {"base", "axes", "limit"})
    if unknown:
        raise ConfigError(f"grid: unknown key(s) {unknown}")
    axes = data.get("axes") or {}
    if not isinstance(axes, dict) or not all(isinstance(v, list) for v in axes.values()):
        raise ConfigError("grid: axes must map dotted keys to lists")
    return ExperimentGrid(config_from_dict(data.get("base")), axes, int(data.get("limit", DEFAULT_GRID_LIMIT)))
