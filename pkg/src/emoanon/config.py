"""Run configuration: a JSON document mirroring the dataclasses below.

Unknown keys are rejected.  Component seeds left as ``null`` are derived from
the top-level ``seed`` when the config is resolved, so every report echoes
explicit values.
"""
from __future__ import annotations

import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field, fields, is_dataclass, replace
from pathlib import Path

from .anonymizer import AnonymizerConfig
from .errors import DataError
from .labels import EMOTIONS, Emotion
from .metrics import PROTOCOLS
from .synth import WorldSpec

DEFAULT_ALPHA_GRID = (-50.0, -35.0, -20.0, 0.0, 20.0, 35.0, 50.0)


@dataclass(frozen=True)
class SvmConfig:
    reg_C: float = 0.5
    epochs: int = 2000
    eta0: float = 0.1


@dataclass(frozen=True)
class IndicatorConfig:
    hidden: int = 128
    lr: float = 0.1
    max_epochs: int = 500
    patience: int = 10
    min_delta: float = 1e-5
    seed: int | None = None


@dataclass(frozen=True)
class CompensationSection:
    alpha: dict = field(default_factory=lambda: {"happy": 35.0, "neutral": 0.0, "sad": -35.0, "angry": 35.0})
    skip_neutral: bool = True
    calibrate: bool = True
    alpha_grid: tuple = DEFAULT_ALPHA_GRID
    plateau_magnitudes: tuple = (20.0, 25.0, 30.0, 35.0, 40.0, 45.0, 50.0)


@dataclass(frozen=True)
class SplitConfig:
    train: float = 0.6
    dev: float = 0.2
    seed: int | None = None


@dataclass(frozen=True)
class EvalConfig:
    protocol: str = "cross-speaker-impostor"
    max_trials: int = 5000
    probe_dev_fraction: float = 0.15
    seed: int | None = None


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    world: WorldSpec = field(default_factory=lambda: WorldSpec(seed=None))
    anonymizer: AnonymizerConfig = field(default_factory=lambda: AnonymizerConfig(seed=None))
    svm: SvmConfig = field(default_factory=SvmConfig)
    indicator: IndicatorConfig = field(default_factory=IndicatorConfig)
    compensation: CompensationSection = field(default_factory=CompensationSection)
    splits: SplitConfig = field(default_factory=SplitConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    # external pool archive for selection-average; null -> a separate synthetic pool
    external_pool: str | None = None

    def validate(self) -> None:
        if self.seed < 0:
            raise DataError("seed must be a non-negative integer")
        self.world.validate()
        self.anonymizer.validate()
        if self.svm.reg_C <= 0 or self.svm.epochs < 1 or self.svm.eta0 <= 0:
            raise DataError("svm: reg_C, epochs and eta0 must be positive")
        ind = self.indicator
        if ind.hidden < 1 or ind.lr <= 0 or ind.max_epochs < 1 or ind.patience < 1:
            raise DataError("indicator: hidden, lr, max_epochs and patience must be positive")
        s = self.splits
        if not (0 < s.train < 1 and 0 < s.dev < 1 and s.train + s.dev < 1):
            raise DataError("splits: train and dev fractions must be positive and sum below 1")
        if self.eval.protocol not in PROTOCOLS:
            raise DataError(f"eval.protocol must be one of {PROTOCOLS}")
        if self.eval.max_trials < 1:
            raise DataError("eval.max_trials must be >= 1")
        if not 0 < self.eval.probe_dev_fraction < 1:
            raise DataError("eval.probe_dev_fraction must lie in (0, 1)")
        if not self.compensation.alpha_grid:
            raise DataError("compensation.alpha_grid is empty")
        for k in self.compensation.alpha:
            try:
                Emotion.parse(k)
            except ValueError:
                raise DataError(f"compensation.alpha: unknown emotion {k!r}") from None

    def resolved(self) -> "RunConfig":
        """Fill every unset component seed from the top-level seed."""
        s = self.seed
        pick = lambda v, off: s + off if v is None else v  # noqa: E731
        return replace(
            self,
            world=replace(self.world, seed=pick(self.world.seed, 0)),
            anonymizer=replace(self.anonymizer, seed=pick(self.anonymizer.seed, 1)),
            splits=replace(self.splits, seed=pick(self.splits.seed, 2)),
            indicator=replace(self.indicator, seed=pick(self.indicator.seed, 3)),
            eval=replace(self.eval, seed=pick(self.eval.seed, 4)),
        )

    def alpha_map(self) -> dict[Emotion, float]:
        alpha = {Emotion.parse(k): float(v) for k, v in self.compensation.alpha.items()}
        return {e: alpha.get(e, 0.0) for e in EMOTIONS}


def _check_type(value, hint, where: str):
    args = typing.get_args(hint)
    allowed = args if typing.get_origin(hint) in (typing.Union, types.UnionType) else (hint,)
    ok = False
    for t in allowed:
        if t is type(None):
            ok |= value is None
        elif t is float:
            ok |= isinstance(value, (int, float)) and not isinstance(value, bool)
        elif t is int:
            ok |= isinstance(value, int) and not isinstance(value, bool)
        elif t in (bool, str, dict):
            ok |= isinstance(value, t)
        elif t is tuple:
            ok |= isinstance(value, (list, tuple))
        else:
            ok = True
    if not ok:
        raise DataError(f"{where}: invalid value {value!r}")


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise DataError(f"{where}: expected an object")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - names)
    if unknown:
        raise DataError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for f in fields(cls):
        if f.name not in data:
            continue
        value = data[f.name]
        hint = hints[f.name]
        if is_dataclass(hint):
            value = _build(hint, value, f"{where}.{f.name}")
            if cls is RunConfig and hasattr(value, "seed") and "seed" not in data[f.name]:
                value = replace(value, seed=None)
        else:
            _check_type(value, hint, f"{where}.{f.name}")
            if isinstance(value, list):
                value = tuple(value)
        kwargs[f.name] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        raise DataError(f"{where}: {exc}") from None


def config_from_dict(data: dict, source: str = "config") -> RunConfig:
    cfg = _build(RunConfig, data, source)
    cfg.validate()
    return cfg


def load_config(path) -> RunConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"{path}: no such config file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None
    return config_from_dict(data, str(path))


def config_to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
