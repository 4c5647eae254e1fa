"""Run configuration: one JSON document, every field defaulted and validated.

Validation errors name the offending field by its dotted path, e.g.
``uncertainty.K: expected an integer >= 2, got 1``.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .dataset import DEFAULT_SPLIT_RATIOS, SynthSpec, benchmark_spec, validate_spec
from .errors import ConfigError, SpecError

ORDER_KINDS = (
    "confidence_asc", "confidence_desc", "time_asc", "time_desc", "difficulty_asc",
    "difficulty_desc", "uncertainty_asc", "uncertainty_desc", "random",
)


@dataclass
class DataConfig:
    source: str = "synthetic"  # "synthetic" or "csv"
    path: str | None = None
    class_count: int = 2
    synth: dict = field(default_factory=lambda: benchmark_spec().to_dict())
    split_ratios: list = field(default_factory=lambda: list(DEFAULT_SPLIT_RATIOS))


@dataclass
class ModelConfig:
    hidden: int = 32
    keep_rate: float = 0.9
    lr: float = 0.05
    batch_size: int = 16  # series per minibatch
    train_dropout: bool = True


@dataclass
class ImportanceConfig:
    lam: float = 0.1
    lr_beta: float = 0.05
    polarity: str = "as_written"
    replay_mode: str = "threshold"
    replay_M: int = 1


@dataclass
class UncertaintyConfig:
    K: int = 20
    variant: str = "literal"
    patience: int = 5
    min_delta: float = 1e-3
    epoch_cap: int = 200


@dataclass
class CurriculumConfig:
    M: int = 4
    bucket_mode: str = "quantile"
    order: str = "confidence_asc"
    pretrain_epochs: int = 1


@dataclass
class EvaluationConfig:
    alpha: float = 0.1
    baseline_seeds: int = 3


@dataclass
class SeedConfig:
    data: int = 0
    split: int = 0
    model: int = 0
    dropout: int = 0
    order: int = 0

    def offset(self, n: int) -> "SeedConfig":
        return SeedConfig(*(v + n for v in dataclasses.astuple(self)))


@dataclass
class CompareConfig:
    strategies: list = field(default_factory=lambda: list(ORDER_KINDS))
    seeds: int = 5


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    importance: ImportanceConfig = field(default_factory=ImportanceConfig)
    uncertainty: UncertaintyConfig = field(default_factory=UncertaintyConfig)
    curriculum: CurriculumConfig = field(default_factory=CurriculumConfig)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    seeds: SeedConfig = field(default_factory=SeedConfig)
    compare: CompareConfig = field(default_factory=CompareConfig)
    output_dir: str = "runs/default"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def synth_spec(self) -> SynthSpec:
        return SynthSpec.from_dict(self.data.synth)

    def replace(self, **sections) -> "RunConfig":
        """Copy with whole sections or dotted fields replaced, e.g.
        ``cfg.replace(**{"curriculum.order": "random"})``."""
        raw = self.to_dict()
        for key, value in sections.items():
            node = raw
            *head, last = key.split(".")
            for h in head:
                node = node[h]
            node[last] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
        return parse_config(raw)


def _check(cond: bool, path: str, expected: str, got: Any) -> None:
    if not cond:
        raise ConfigError(f"{path}: expected {expected}, got {got!r}")


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _build(cls, raw: Any, path: str):
    _check(isinstance(raw, dict), path or "<root>", "an object", raw)
    names = {f.name: f for f in dataclasses.fields(cls)}
    for key in raw:
        if key not in names:
            raise ConfigError(f"{path + '.' if path else ''}{key}: unknown field")
    kwargs = {}
    defaults = cls()
    for name, f in names.items():
        sub = f"{path}.{name}" if path else name
        if name not in raw:
            kwargs[name] = getattr(defaults, name)
            continue
        value = raw[name]
        default = getattr(defaults, name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif isinstance(default, bool):
            _check(isinstance(value, bool), sub, "a boolean", value)
            kwargs[name] = value
        elif _is_int(default):
            _check(_is_int(value), sub, "an integer", value)
            kwargs[name] = value
        elif isinstance(default, float):
            _check(_is_num(value), sub, "a number", value)
            kwargs[name] = float(value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def _validate(cfg: RunConfig) -> None:
    d = cfg.data
    _check(d.source in ("synthetic", "csv"), "data.source", "'synthetic' or 'csv'", d.source)
    if d.source == "csv":
        _check(isinstance(d.path, str) and bool(d.path), "data.path", "a file path", d.path)
    _check(_is_int(d.class_count) and d.class_count >= 2, "data.class_count", "an integer >= 2", d.class_count)
    _check(
        isinstance(d.split_ratios, list) and len(d.split_ratios) == 3
        and all(_is_num(r) and r >= 0 for r in d.split_ratios)
        and abs(sum(d.split_ratios) - 1.0) < 1e-9,
        "data.split_ratios", "three non-negative numbers summing to 1", d.split_ratios,
    )
    if d.source == "synthetic":
        try:
            spec = SynthSpec.from_dict(d.synth)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"data.synth: malformed synthetic spec ({exc})") from None
        try:
            validate_spec(spec)
        except SpecError as exc:
            raise ConfigError(f"data.synth: {exc}") from None
        _check(spec.class_count == d.class_count, "data.synth.class_count",
               f"to equal data.class_count={d.class_count}", spec.class_count)

    m = cfg.model
    _check(m.hidden >= 1, "model.hidden", "an integer >= 1", m.hidden)
    _check(0.0 < m.keep_rate <= 1.0, "model.keep_rate", "a number in (0, 1]", m.keep_rate)
    _check(m.lr > 0, "model.lr", "a positive number", m.lr)
    _check(m.batch_size >= 1, "model.batch_size", "an integer >= 1", m.batch_size)

    i = cfg.importance
    _check(i.lam >= 0, "importance.lam", "a non-negative number", i.lam)
    _check(i.lr_beta >= 0, "importance.lr_beta", "a non-negative number", i.lr_beta)
    _check(i.polarity in ("as_written", "narrative"), "importance.polarity", "'as_written' or 'narrative'", i.polarity)
    _check(i.replay_mode in ("threshold", "fraction", "none"), "importance.replay_mode",
           "'threshold', 'fraction' or 'none'", i.replay_mode)
    _check(i.replay_M >= 1, "importance.replay_M", "an integer >= 1", i.replay_M)

    u = cfg.uncertainty
    _check(u.K >= 2, "uncertainty.K", "an integer >= 2", u.K)
    _check(u.variant in ("literal", "entropy"), "uncertainty.variant", "'literal' or 'entropy'", u.variant)
    _check(u.patience >= 1, "uncertainty.patience", "an integer >= 1", u.patience)
    _check(u.min_delta >= 0, "uncertainty.min_delta", "a non-negative number", u.min_delta)
    _check(u.epoch_cap >= 1, "uncertainty.epoch_cap", "an integer >= 1", u.epoch_cap)

    c = cfg.curriculum
    _check(c.M >= 1, "curriculum.M", "an integer >= 1", c.M)
    _check(c.bucket_mode in ("quantile", "sigma_band"), "curriculum.bucket_mode", "'quantile' or 'sigma_band'", c.bucket_mode)
    _check(c.order in ORDER_KINDS, "curriculum.order", f"one of {ORDER_KINDS}", c.order)
    _check(c.pretrain_epochs >= 1, "curriculum.pretrain_epochs", "an integer >= 1", c.pretrain_epochs)

    e = cfg.evaluation
    _check(0.0 < e.alpha < 1.0, "evaluation.alpha", "a number in (0, 1)", e.alpha)
    _check(e.baseline_seeds >= 1, "evaluation.baseline_seeds", "an integer >= 1", e.baseline_seeds)

    for name, v in dataclasses.asdict(cfg.seeds).items():
        _check(v >= 0, f"seeds.{name}", "a non-negative integer", v)

    _check(isinstance(cfg.compare.strategies, list) and len(cfg.compare.strategies) > 0,
           "compare.strategies", "a non-empty list", cfg.compare.strategies)
    for k, s in enumerate(cfg.compare.strategies):
        _check(s in ORDER_KINDS, f"compare.strategies[{k}]", f"one of {ORDER_KINDS}", s)
    _check(cfg.compare.seeds >= 1, "compare.seeds", "an integer >= 1", cfg.compare.seeds)
    _check(isinstance(cfg.output_dir, str) and bool(cfg.output_dir), "output_dir", "a directory path", cfg.output_dir)


def parse_config(raw: dict) -> RunConfig:
    cfg = _build(RunConfig, raw, "")
    _validate(cfg)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"{path}: config file not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    return parse_config(raw)
