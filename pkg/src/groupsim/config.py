"""Run configuration (YAML) and its fingerprint."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class LLMConfig:
    backend: str = "mock"  # mock | http
    endpoint: str = "http://localhost:8000/v1/chat/completions"
    model: str = "gpt-4o"
    temperature: float = 0.0
    max_tokens: int = 1024
    max_retries: int = 3
    backoff: float = 0.5
    in_flight_limit: int = 4
    token_budget: int = 8000
    mock_seed: int = 0


@dataclass
class MetapathConfig:
    max_order: int = 2
    top_k: int = 10


@dataclass
class NeighborConfig:
    top_k: int = 5
    min_shared: int = 1


@dataclass
class ProfilingConfig:
    keyword_cap: int = 8


@dataclass
class TopicsConfig:
    enabled: bool = True


@dataclass
class LeadershipConfig:
    enabled: bool = True


@dataclass
class DynamicConfig:
    max_rounds: int = 3


@dataclass
class SimulationConfig:
    strategy: str = "static"  # static | dynamic | heuristic


@dataclass
class EvalConfig:
    k_values: list[int] = field(default_factory=lambda: [5, 10])
    n_negatives: int = 50


@dataclass
class EmbedderConfig:
    kind: str = "hash"  # hash | http
    dim: int = 256
    seed: int = 0
    endpoint: str = ""
    model: str = ""


@dataclass
class RunConfig:
    data_dir: Path = Path("data")
    cache_dir: Path | None = Path("cache")
    output_dir: Path = Path("out")
    seed: int = 0
    llm: LLMConfig = field(default_factory=LLMConfig)
    metapath: MetapathConfig = field(default_factory=MetapathConfig)
    neighbors: NeighborConfig = field(default_factory=NeighborConfig)
    profiling: ProfilingConfig = field(default_factory=ProfilingConfig)
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    leadership: LeadershipConfig = field(default_factory=LeadershipConfig)
    dynamic: DynamicConfig = field(default_factory=DynamicConfig)
    simulation: SimulationConfig = field(default_factory=SimulationConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    embedder: EmbedderConfig = field(default_factory=EmbedderConfig)

    def validate(self) -> "RunConfig":
        if self.metapath.max_order not in (1, 2, 3):
            raise ConfigError("metapath.max_order must be 1, 2 or 3")
        if self.eval.n_negatives < 1:
            raise ConfigError("eval.n_negatives must be >= 1")
        if self.dynamic.max_rounds < 1:
            raise ConfigError("dynamic.max_rounds must be >= 1")
        if not self.eval.k_values or any(k < 1 for k in self.eval.k_values):
            raise ConfigError("eval.k_values must be positive integers")
        if self.llm.backend not in ("mock", "http"):
            raise ConfigError("llm.backend must be mock or http")
        if self.simulation.strategy not in ("static", "dynamic", "heuristic"):
            raise ConfigError("simulation.strategy must be static, dynamic or heuristic")
        if self.embedder.kind not in ("hash", "http"):
            raise ConfigError("embedder.kind must be hash or http")
        if self.profiling.keyword_cap < 1:
            raise ConfigError("profiling.keyword_cap must be >= 1")
        if self.llm.temperature < 0:
            raise ConfigError("llm.temperature must be >= 0")
        return self

    def to_dict(self) -> dict:
        def conv(v: Any) -> Any:
            if isinstance(v, Path):
                return str(v)
            if isinstance(v, dict):
                return {k: conv(x) for k, x in v.items()}
            if isinstance(v, list):
                return [conv(x) for x in v]
            return v

        return conv(dataclasses.asdict(self))

    def pipeline_fingerprint(self, data_digest: str = "") -> str:
        """Hash of every setting that shapes pipeline artifacts.

        Locations, concurrency and simulation settings are left out, so runs of
        different strategies over the same artifacts share this value.
        """
        d = self.to_dict()
        for key in ("data_dir", "cache_dir", "output_dir", "simulation", "dynamic"):
            d.pop(key)
        d["llm"].pop("in_flight_limit")
        return _digest({"config": d, "data": data_digest})

    def run_fingerprint(self, data_digest: str = "") -> str:
        """Pipeline fingerprint plus the simulation settings of one recommend run."""
        return _digest({
            "pipeline": self.pipeline_fingerprint(data_digest),
            "strategy": self.simulation.strategy,
            "max_rounds": self.dynamic.max_rounds if self.simulation.strategy == "dynamic" else None,
        })


def _digest(doc: Any) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


def _build(cls, data: Mapping[str, Any], where: str):
    if not isinstance(data, Mapping):
        raise ConfigError(f"{where or 'config'} must be a mapping")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = set(data) - set(fields)
    if unknown:
        raise ConfigError(f"unknown config keys in {where or 'top level'}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = getattr(cls(), name)
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = value
    return cls(**kwargs)


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read YAML, apply dotted ``overrides``; relative paths resolve against the file's directory."""
    data: dict = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        base = path.resolve().parent
    for dotted, value in (overrides or {}).items():
        node = data
        *parents, leaf = dotted.split(".")
        for p in parents:
            node = node.setdefault(p, {})
        node[leaf] = value
    cfg = _build(RunConfig, data, "")
    for name in ("data_dir", "cache_dir", "output_dir"):
        value = getattr(cfg, name)
        if value is None:
            continue
        p = Path(value)
        setattr(cfg, name, p if p.is_absolute() else base / p)
    return cfg.validate()


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
