"""Run configuration. Precedence: flags > config file > environment > defaults."""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import yaml

from .builder import DEFAULT_K_BUILD
from .errors import InvalidArgument
from .gateway import DEFAULT_MODEL, DEFAULT_SAMPLE_COUNT, DEFAULT_TEMPERATURE
from .predictor import DEFAULT_K_INFER, DEFAULT_SHOT_COUNT


@dataclass
class RunConfig:
    backend: str = "mock"
    embedder: str = "hash"
    base_url: str = "https://api.openai.com/v1"
    model_id: str = DEFAULT_MODEL
    embedding_model: str = "text-embedding-ada-002"
    embedding_dim: int = 256
    temperature: float = DEFAULT_TEMPERATURE
    sample_count: int = DEFAULT_SAMPLE_COUNT
    k_build: int = DEFAULT_K_BUILD
    k_infer: int = DEFAULT_K_INFER
    shot_count: int = DEFAULT_SHOT_COUNT
    seed: int = 0
    train_n: int | None = None
    test_n: int | None = None
    dataset: str | None = None
    memory_dir: str = "memory"
    fixtures: str | None = None
    report_dir: str = "reports"
    jobs: int = 1
    max_attempts: int = 3
    backoff: float = 1.0
    rate_limit: float | None = None
    force: bool = False
    dry_run: bool = False

    def __post_init__(self) -> None:
        if self.backend not in ("remote", "mock"):
            raise InvalidArgument(f"backend must be remote or mock, not {self.backend!r}")
        if self.embedder not in ("remote", "hash"):
            raise InvalidArgument(f"embedder must be remote or hash, not {self.embedder!r}")
        for name in ("k_build", "shot_count", "jobs", "sample_count", "max_attempts"):
            if getattr(self, name) < 1:
                raise InvalidArgument(f"{name} must be >= 1")
        if self.k_infer < 0:
            raise InvalidArgument("k_infer must be >= 0")

    def dump(self) -> dict[str, Any]:
        return asdict(self)


# nested config-file keys -> flat field names
_FILE_ALIASES = {
    ("remote", "base_url"): "base_url",
    ("remote", "model_id"): "model_id",
    ("remote", "embedding_model"): "embedding_model",
    ("mock", "fixtures"): "fixtures",
}

_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _coerce(name: str, value: Any) -> Any:
    kind = _FIELD_TYPES[name]
    if value is None:
        return None
    if "bool" in kind:
        if isinstance(value, str):
            return value.strip().lower() in ("1", "true", "yes", "on")
        return bool(value)
    try:
        if "int" in kind:
            return int(value)
        if "float" in kind:
            return float(value)
    except (TypeError, ValueError):
        raise InvalidArgument(f"{name}: expected a number, got {value!r}") from None
    return str(value)


def read_config_file(path: str | os.PathLike) -> dict[str, Any]:
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise InvalidArgument(f"{path}: not valid YAML ({exc})") from None
    if not isinstance(data, dict):
        raise InvalidArgument(f"{path}: config must be a mapping")
    flat: dict[str, Any] = {}
    for key, value in data.items():
        if isinstance(value, dict):
            for sub, subval in value.items():
                alias = _FILE_ALIASES.get((key, sub))
                if alias is None:
                    raise InvalidArgument(f"{path}: unknown key {key}.{sub}")
                flat[alias] = subval
        elif key in _FIELD_TYPES:
            flat[key] = value
        else:
            raise InvalidArgument(f"{path}: unknown key {key}")
    return {k: _coerce(k, v) for k, v in flat.items()}


def read_environment(environ: Mapping[str, str] = os.environ) -> dict[str, Any]:
    """``TOOLMEM_<FIELD>`` variables, e.g. ``TOOLMEM_K_INFER=8``."""
    out = {}
    for name in _FIELD_TYPES:
        raw = environ.get(f"TOOLMEM_{name.upper()}")
        if raw is not None and raw != "":
            out[name] = _coerce(name, raw)
    return out


def resolve_config(
    flags: Mapping[str, Any] | None = None,
    config_file: str | os.PathLike | None = None,
    environ: Mapping[str, str] = os.environ,
) -> RunConfig:
    merged: dict[str, Any] = {}
    merged.update(read_environment(environ))
    if config_file is not None:
        merged.update(read_config_file(config_file))
    merged.update({k: v for k, v in (flags or {}).items() if v is not None and k in _FIELD_TYPES})
    return RunConfig(**merged)
