"""Experiment configuration: nested dataclasses, YAML loading, dotted overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .curriculum import METRICS, SCHEDULES


class ConfigError(ValueError):
    pass


@dataclass
class TaskConfig:
    kind: str = "dict"            # copy | dict | files
    n_train: int = 5000
    n_dev: int = 300
    n_test: int = 300
    len_min: int = 2
    len_max: int = 20
    vocab_size: int = 64
    swap_window: int = 2
    zipf: float = 1.0
    seed: int | None = None       # None: use the experiment seed
    train_src: str | None = None
    train_tgt: str | None = None
    dev_src: str | None = None
    dev_tgt: str | None = None
    test_src: str | None = None
    test_tgt: str | None = None
    tokenizer: str = "whitespace"


@dataclass
class ModelSection:
    embed_dim: int = 32
    ff_dim: int = 64
    layers: int = 2
    heads: int = 2
    dropout: float = 0.1
    label_smoothing: float = 0.1


@dataclass
class OptimSection:
    peak_lr: float = 2e-3
    warmup_steps: int = 400
    init_lr: float = 1e-7
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-9


@dataclass
class CurriculumSection:
    metric: str = "none"
    schedule: str = "none"
    batching: str = "length"       # length | difficulty
    a: int = 1
    c0: float = 0.2
    beta: float = 0.9
    curriculum_phases: int | None = None   # T for linear/sqrt; None: derive from the baseline
    monotone: bool = True
    bleu_T: float | None = None
    baseline_log: str | None = None


@dataclass
class ExperimentConfig:
    task: TaskConfig = field(default_factory=TaskConfig)
    model: ModelSection = field(default_factory=ModelSection)
    optim: OptimSection = field(default_factory=OptimSection)
    curriculum: CurriculumSection = field(default_factory=CurriculumSection)
    seed: int = 1
    max_phases: int = 200
    patience: int = 10
    token_budget: int = 512
    score_token_budget: int = 4096
    beam_size: int = 5
    length_penalty: float = 1.0
    decode_slack: int = 5
    name: str | None = None

    def validate(self, baseline_given=False) -> "ExperimentConfig":
        cur = self.curriculum
        if cur.metric not in METRICS:
            raise ConfigError(f"unknown difficulty metric {cur.metric!r}; choose from {METRICS}")
        if cur.schedule not in SCHEDULES:
            raise ConfigError(f"unknown competence schedule {cur.schedule!r}; choose from {SCHEDULES}")
        if (cur.metric == "none") != (cur.schedule == "none"):
            raise ConfigError("metric 'none' and schedule 'none' must be set together")
        if cur.schedule == "dmc" and not baseline_given and cur.bleu_T is None and cur.baseline_log is None:
            raise ConfigError("the dmc schedule needs bleu_T or baseline_log")
        if cur.batching not in ("length", "difficulty"):
            raise ConfigError(f"unknown batching key {cur.batching!r}")
        if cur.batching == "difficulty" and cur.metric == "none":
            raise ConfigError("difficulty batching needs a difficulty metric")
        if self.task.kind not in ("copy", "dict", "files"):
            raise ConfigError(f"unknown task kind {self.task.kind!r}")
        if self.task.kind == "files" and not (self.task.train_src and self.task.train_tgt
                                              and self.task.dev_src and self.task.dev_tgt):
            raise ConfigError("file task needs train_src/train_tgt/dev_src/dev_tgt")
        if self.max_phases < 1 or self.patience < 1 or self.token_budget < 1:
            raise ConfigError("max_phases, patience and token_budget must be positive")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def run_id(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha1(blob.encode()).hexdigest()[:12]

    def method_name(self) -> str:
        cur = self.curriculum
        if cur.metric == "none":
            return "Baseline"
        label = {"dmc": "DMC", "sqrt": "Sqrt", "linear": "Linear"}[cur.schedule]
        name = f"{cur.metric.capitalize()} + {label}"
        return name + " +Batching" if cur.batching == "difficulty" else name


_SCALARS = {"int": int, "float": float, "bool": bool, "str": str}


def _coerce(value, annotation: str, where: str):
    """Convert ``value`` to the scalar type named by a field annotation like ``"float | None"``."""
    kinds = [k.strip() for k in annotation.split("|")]
    if value is None:
        if "None" in kinds:
            return None
        raise ConfigError(f"{where} may not be null")
    target = _SCALARS.get(kinds[0])
    if target is None or isinstance(value, target) and not (target is int and isinstance(value, bool)):
        return value
    try:
        if target is bool:
            if isinstance(value, str) and value.lower() in ("true", "false"):
                return value.lower() == "true"
            raise ValueError(value)
        if target is int and isinstance(value, float) and not value.is_integer():
            raise ValueError(value)
        return target(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{where}: cannot read {value!r} as {kinds[0]}") from None


def _build(cls, data):
    if not isinstance(data or {}, dict):
        raise ConfigError(f"{cls.__name__} section must be a mapping")
    data = dict(data or {})
    kwargs = {}
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config field {cls.__name__}.{key}")
        sub = _SECTIONS.get((cls, key))
        kwargs[key] = _build(sub, value) if sub else _coerce(value, str(names[key].type), f"{cls.__name__}.{key}")
    return cls(**kwargs)


_SECTIONS = {
    (ExperimentConfig, "task"): TaskConfig,
    (ExperimentConfig, "model"): ModelSection,
    (ExperimentConfig, "optim"): OptimSection,
    (ExperimentConfig, "curriculum"): CurriculumSection,
}


def config_from_dict(data) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return config_from_dict(data)


def flat_fields(cls=ExperimentConfig, prefix=""):
    """Yield ``(dotted_name, field)`` for every leaf field."""
    for f in dataclasses.fields(cls):
        sub = _SECTIONS.get((cls, f.name))
        if sub:
            yield from flat_fields(sub, f"{prefix}{f.name}.")
        else:
            yield prefix + f.name, f


def apply_overrides(config: ExperimentConfig, overrides: dict) -> ExperimentConfig:
    """Set dotted fields, e.g. ``{"task.n_train": "2000"}``; strings are parsed as YAML scalars."""
    data = config.to_dict()
    known = {name for name, _ in flat_fields()}
    for key, raw in overrides.items():
        if key not in known:
            raise ConfigError(f"unknown config field {key}")
        value = yaml.safe_load(raw) if isinstance(raw, str) else raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = value
    return config_from_dict(data)
