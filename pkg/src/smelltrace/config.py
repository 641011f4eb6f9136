"""Run configuration: JSON file, then command-line flags, then environment variables."""
from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

from .agents import LlmConfig
from .hybrid import HybridConfig
from .monitors import MonitorConfig

ENV_BACKEND_URL = "SMELLTRACE_BACKEND_URL"
ENV_MODEL = "SMELLTRACE_MODEL"
AGENTS = ("random", "llm", "hybrid")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class BackendConfig:
    base_url: str = "http://localhost:11434/v1"
    model: str = "mistral-small3.1:24b"
    timeout: float = 120.0
    max_retries: int = 3
    oracle: str | None = None  # script file; replaces the HTTP backend when set


@dataclass(frozen=True)
class RunConfig:
    monitor: MonitorConfig = field(default_factory=MonitorConfig)
    agent: str = "random"
    backend: BackendConfig = field(default_factory=BackendConfig)
    llm: LlmConfig = field(default_factory=LlmConfig)
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    max_actions: int = 100
    max_logical_ms: int | None = None
    tick_ms: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.agent not in AGENTS:
            raise ConfigError(f"agent must be one of {AGENTS}, not {self.agent!r}")
        if self.max_actions < 0 or self.tick_ms <= 0:
            raise ConfigError("max_actions must be >= 0 and tick_ms > 0")


_SECTIONS = {"monitor": MonitorConfig, "backend": BackendConfig, "llm": LlmConfig, "hybrid": HybridConfig}


def _build(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{where} must be an object")
    names = {f.name for f in fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    try:
        return cls(**raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def config_from_dict(doc: dict) -> RunConfig:
    top = {f.name for f in fields(RunConfig)}
    unknown = set(doc) - top
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    kwargs = {k: (_build(_SECTIONS[k], v, k) if k in _SECTIONS else v) for k, v in doc.items()}
    try:
        return RunConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def load_config(path: str | os.PathLike | None = None, overrides: dict | None = None,
                env: dict | None = None) -> RunConfig:
    """``overrides`` holds flag values (``None`` means not given), keyed like the file."""
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = config_from_dict(doc)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.partition(".")
        if name:
            cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{name: value})})
        else:
            cfg = replace(cfg, **{key: value})
    env = os.environ if env is None else env
    backend = cfg.backend
    if env.get(ENV_BACKEND_URL):
        backend = replace(backend, base_url=env[ENV_BACKEND_URL])
    if env.get(ENV_MODEL):
        backend = replace(backend, model=env[ENV_MODEL])
    return replace(cfg, backend=backend)
