"""Run configuration: CLI flag > config file > default."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping, Optional

from .model import ConstructionParams

ENV_VAR = "EU_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    format: str = "canonical"
    typemap: Optional[str] = None
    rules: Optional[str] = None
    params: dict = field(default_factory=dict)
    embedder: str = "hash-ngram"
    dim: int = 512
    embeddings: Optional[str] = None
    figure_role: str = "picture"
    protocol: str = "strict"
    ks: tuple[int, ...] = (1, 2, 3, 5)
    chunks: str = "both"
    scope: str = "page"
    out_dir: str = "out"
    jobs: int = 1

    def __post_init__(self) -> None:
        if self.embedder not in ("hash-ngram", "precomputed"):
            raise ConfigError(f"embedder must be hash-ngram or precomputed, got {self.embedder!r}")
        if self.protocol not in ("strict", "fair"):
            raise ConfigError(f"protocol must be strict or fair, got {self.protocol!r}")
        if self.chunks not in ("element", "eu", "both"):
            raise ConfigError(f"chunks must be element, eu or both, got {self.chunks!r}")
        if self.scope not in ("page", "corpus"):
            raise ConfigError(f"scope must be page or corpus, got {self.scope!r}")
        if self.dim < 1 or self.jobs < 1:
            raise ConfigError("dim and jobs must be positive")
        try:
            self.construction_params()
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"params: {exc}") from None

    def construction_params(self) -> ConstructionParams:
        return ConstructionParams().updated(**self.params)

    def merged(self, overrides: Mapping[str, Any]) -> "RunConfig":
        """Apply non-None overrides; ``params`` dicts are merged key by key."""
        known = {f.name for f in fields(self)}
        clean = {}
        for k, v in overrides.items():
            if v is None:
                continue
            if k not in known:
                raise ConfigError(f"unknown config key {k!r}")
            if k == "params":
                v = {**self.params, **v}
            if k == "ks":
                v = tuple(int(x) for x in v)
            clean[k] = v
        return replace(self, **clean)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], where: str = "config") -> "RunConfig":
        if not isinstance(d, Mapping):
            raise ConfigError(f"{where}: expected an object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"{where}: unknown config keys {unknown}")
        return cls().merged(d)

    @classmethod
    def load(cls, path: str | Path) -> "RunConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(data, str(path))


def resolve_config(path: Optional[str], env: Mapping[str, str] = os.environ) -> RunConfig:
    """Explicit path first, then $EU_CONFIG, then defaults."""
    path = path or env.get(ENV_VAR)
    return RunConfig.load(path) if path else RunConfig()
