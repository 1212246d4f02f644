"""JSON run configuration with strict key checking and shipped presets."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from importlib import resources
from pathlib import Path

from .model import ConfigurationError, HamiltonianSpec, check_sites
from .nqs import Mode
from .sampler import SamplerConfig
from .trainer import TrainConfig

PRESETS = ("n4", "n4b", "n4c", "n6", "n8")
RANK_FAMILIES = ("mg-momentum", "mg-dimer", "ed-ground", "file")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelSection:
    N: int = 4
    J1: float = 1.0
    J2: float = 0.5

    def spec(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.N, self.J1, self.J2)


@dataclass(frozen=True)
class EnsembleSection:
    mode: str = Mode.ST_MH.value
    K: int = 2
    h: int = 32


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1e-3
    steps: int = 1000
    lambda_start: float = 1e-3
    lambda_final: float = 0.5
    anneal_steps: int = 200
    head_weights: list[float] | None = None
    estimator: str = "monte-carlo"
    penalty: str = "frobenius"
    clamp: float = 50.0


@dataclass(frozen=True)
class SamplerSection:
    n_samples: int = 512
    n_chains: int = 8
    sweeps: int = 5
    burn_in: int = 100
    mode: str = "mixture"


@dataclass(frozen=True)
class OutputSection:
    directory: str = "runs"
    run_id: str = "run"


@dataclass(frozen=True)
class BenchSection:
    K_list: list[int] = field(default_factory=lambda: [1, 2, 3, 4, 5, 6])
    h_list: list[int] = field(default_factory=list)
    steps: int = 25
    warmup: int = 5
    repeats: int = 3


@dataclass(frozen=True)
class RankSection:
    family: str = "mg-momentum"
    file: str | None = None
    width: int | None = None


@dataclass(frozen=True)
class CostSection:
    h_list: list[int] = field(default_factory=lambda: list(range(1, 129)))
    h_m: int | None = None


_SECTIONS = {
    "model": ModelSection,
    "ensemble": EnsembleSection,
    "train": TrainSection,
    "sampler": SamplerSection,
    "output": OutputSection,
    "bench": BenchSection,
    "rank": RankSection,
    "cost": CostSection,
}


@dataclass(frozen=True)
class RunConfig:
    model: ModelSection = field(default_factory=ModelSection)
    ensemble: EnsembleSection = field(default_factory=EnsembleSection)
    train: TrainSection = field(default_factory=TrainSection)
    sampler: SamplerSection = field(default_factory=SamplerSection)
    output: OutputSection = field(default_factory=OutputSection)
    seeds: list[int] = field(default_factory=lambda: [0])
    bench: BenchSection = field(default_factory=BenchSection)
    rank: RankSection = field(default_factory=RankSection)
    cost: CostSection = field(default_factory=CostSection)

    def validate(self) -> "RunConfig":
        try:
            check_sites(self.model.N)
            Mode(self.ensemble.mode)
            if self.ensemble.K < 1 or self.ensemble.h < 0:
                raise ConfigError("ensemble needs K >= 1 and h >= 0")
            if not self.seeds:
                raise ConfigError("seeds must be a non-empty list")
            if self.rank.family not in RANK_FAMILIES:
                raise ConfigError(f"rank.family must be one of {RANK_FAMILIES}")
            if self.rank.family == "file" and not self.rank.file:
                raise ConfigError("rank.family 'file' needs rank.file")
            if self.bench.warmup < 0 or self.bench.steps <= self.bench.warmup:
                raise ConfigError("bench.steps must exceed bench.warmup")
            if self.bench.repeats < 1:
                raise ConfigError("bench.repeats must be positive")
            self.train_config(self.seeds[0])
            cfg_weights = self.train.head_weights
            if cfg_weights is not None and len(cfg_weights) != self.ensemble.K:
                raise ConfigError(f"{len(cfg_weights)} head weights for K={self.ensemble.K}")
        except ConfigError:
            raise
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from exc
        return self

    def sampler_config(self, seed: int) -> SamplerConfig:
        return SamplerConfig(seed=seed, **asdict(self.sampler))

    def train_config(self, seed: int) -> TrainConfig:
        t = asdict(self.train)
        hw = t.pop("head_weights")
        return TrainConfig(
            head_weights=None if hw is None else tuple(hw),
            sampler=self.sampler_config(seed),
            **t,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def with_overrides(self, seed: int | None = None, out: str | None = None) -> "RunConfig":
        cfg = self
        if seed is not None:
            cfg = replace(cfg, seeds=[seed])
        if out is not None:
            cfg = replace(cfg, output=replace(cfg.output, directory=out))
        return cfg


def _section(cls, data, name: str):
    if not isinstance(data, dict):
        raise ConfigError(f"section '{name}' must be an object")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in '{name}': {', '.join(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ConfigError(f"section '{name}': {exc}") from exc


def config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a JSON object")
    allowed = set(_SECTIONS) | {"seeds"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(unknown)}")
    kwargs = {name: _section(cls, data[name], name) for name, cls in _SECTIONS.items() if name in data}
    if "seeds" in data:
        seeds = data["seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) for s in seeds):
            raise ConfigError("seeds must be a list of integers")
        kwargs["seeds"] = list(seeds)
    return RunConfig(**kwargs).validate()


def loads(text: str) -> RunConfig:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON: {exc}") from exc
    return config_from_dict(data)


def load(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return loads(text)


def load_preset(name: str) -> RunConfig:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset '{name}'; choose from {', '.join(PRESETS)}")
    text = resources.files("stmh.presets").joinpath(f"{name}.json").read_text()
    return loads(text)


__all__ = [
    "ConfigError",
    "ConfigurationError",
    "RunConfig",
    "config_from_dict",
    "load",
    "load_preset",
    "loads",
    "PRESETS",
]
