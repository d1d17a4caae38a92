"""YAML experiment configuration.

Schema (every key optional unless stated; unknown keys are rejected)::

    output_dir: results            # relative to the config file
    repetitions: 4
    seed_stride: 1                 # seed of repetition r = train.seed + r * seed_stride
    losses: all                    # or a list such as [mse, cross_entropy]
    convergence_threshold: 0.05
    train_fraction: 0.7
    workers: 1
    dataset:                       # exactly one of synthetic / path
      synthetic: {N: 2000, d: 20, K: 5, annotators_per_item: 50,
                  teacher_hidden: 32, temperature: 1.0, seed: 0, imbalance: 0.0}
      path: data.csv
    train:
      hidden_sizes: [64]
      epochs: 20
      batch_size: 128
      learning_rate: 0.001
      beta1: 0.9
      beta2: 0.999
      adam_epsilon: 1.0e-8
      seed: 0
      deterministic_full_batch: false
      clip_epsilon: 1.0e-7
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .data import SynthConfig
from .divergences import ALL_LOSSES, LossId
from .errors import BenchError, ConfigError
from .trainer import TrainConfig

_TOP_KEYS = {
    "output_dir",
    "repetitions",
    "seed_stride",
    "losses",
    "convergence_threshold",
    "train_fraction",
    "workers",
    "dataset",
    "train",
}


@dataclass(frozen=True)
class ExperimentConfig:
    synthetic: SynthConfig | None = field(default_factory=SynthConfig)
    dataset_path: Path | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    losses: tuple = ALL_LOSSES
    repetitions: int = 4
    seed_stride: int = 1
    convergence_threshold: float = 0.05
    train_fraction: float = 0.7
    output_dir: Path = Path("results")
    workers: int = 1

    def __post_init__(self):
        if (self.synthetic is None) == (self.dataset_path is None):
            raise ConfigError("dataset needs exactly one of 'synthetic' or 'path'")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be at least 1")
        if not self.losses:
            raise ConfigError("losses must not be empty")
        if self.convergence_threshold <= 0:
            raise ConfigError("convergence_threshold must be positive")
        if not (0 < self.train_fraction < 1):
            raise ConfigError("train_fraction must lie in (0, 1)")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.seed_stride < 0:
            raise ConfigError("seed_stride must be non-negative")

    def seed_for(self, repetition: int) -> int:
        return self.train.seed + repetition * self.seed_stride


def _fields(cls) -> set[str]:
    return {f.name for f in dataclasses.fields(cls)}


def _check_keys(section: dict, allowed: set[str], where: str):
    if not isinstance(section, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(section).__name__}")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(map(str, unknown))}")


def _coerce_floats(cls, section: dict) -> dict:
    # YAML 1.1 reads "1e-8" (no dot) as a string
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    out = dict(section)
    for key, value in section.items():
        if isinstance(defaults.get(key), float) and isinstance(value, str):
            try:
                out[key] = float(value)
            except ValueError:
                raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    return out


def _build(cls, section, where):
    try:
        return cls(**_coerce_floats(cls, section))
    except BenchError as exc:
        raise ConfigError(f"{where}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from None


def synth_from_mapping(section: dict, where: str = "synthetic") -> SynthConfig:
    _check_keys(section, _fields(SynthConfig), where)
    return _build(SynthConfig, section, where)


def parse_losses(value) -> tuple:
    if value in (None, "all"):
        return ALL_LOSSES
    if isinstance(value, str):
        value = [value]
    try:
        losses = tuple(LossId.parse(v) for v in value)
    except BenchError as exc:
        raise ConfigError(str(exc)) from None
    if len(set(losses)) != len(losses):
        raise ConfigError("duplicate loss in 'losses'")
    return losses


def config_from_mapping(raw: dict, base_dir: Path = Path(".")) -> ExperimentConfig:
    raw = raw or {}
    _check_keys(raw, _TOP_KEYS, "config")
    dataset = raw.get("dataset", {"synthetic": {}})
    _check_keys(dataset, {"synthetic", "path"}, "dataset")
    synth = None
    path = None
    if "synthetic" in dataset:
        synth = synth_from_mapping(dataset["synthetic"] or {}, "dataset.synthetic")
    if "path" in dataset:
        path = base_dir / str(dataset["path"])

    train_section = raw.get("train", {}) or {}
    allowed = _fields(TrainConfig) - {"loss"}
    _check_keys(train_section, allowed, "train")
    train = _build(TrainConfig, train_section, "train")

    kwargs = {
        "synthetic": synth,
        "dataset_path": path,
        "train": train,
        "losses": parse_losses(raw.get("losses")),
        "output_dir": base_dir / str(raw.get("output_dir", "results")),
    }
    for key in ("repetitions", "seed_stride", "convergence_threshold", "train_fraction", "workers"):
        if key in raw:
            kwargs[key] = raw[key]
    return _build(ExperimentConfig, kwargs, "config")


def load_yaml(path) -> dict:
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8") as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML: {exc}") from None
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return raw


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return config_from_mapping(load_yaml(path), path.parent)


def load_synth_config(path) -> SynthConfig:
    """Read a generator config: either a full experiment config or a bare ``synthetic:`` section."""
    raw = load_yaml(path)
    if "dataset" in raw:
        section = raw["dataset"]
        _check_keys(section, {"synthetic", "path"}, "dataset")
        if "synthetic" not in section:
            raise ConfigError("dataset has no 'synthetic' section to generate from")
        return synth_from_mapping(section["synthetic"] or {}, "dataset.synthetic")
    if "synthetic" in raw:
        _check_keys(raw, {"synthetic"}, "config")
        return synth_from_mapping(raw["synthetic"] or {}, "synthetic")
    return synth_from_mapping(raw, "synthetic")
