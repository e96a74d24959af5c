"""Pipeline configuration: a frozen dataclass, a flat key=value file format,
and the flag-override rules.

Precedence, weakest first: built-in defaults, config file, CLI flags, then
the SIEVE_BACKEND_URL environment variable for the service URL alone.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError, IoError

__all__ = ["PipelineConfig", "parse_memory", "validate_config", "with_overrides"]

_MEMORY_UNITS = {
    "B": 1,
    "KiB": 1 << 10,
    "MiB": 1 << 20,
    "GiB": 1 << 30,
}


def parse_memory(text: str) -> int:
    """Byte counts as plain integers or with a binary suffix: "512MiB"."""
    match = re.fullmatch(r"\s*(\d+)\s*(B|KiB|MiB|GiB)?\s*", str(text))
    if not match:
        raise ConfigError(f"unparseable memory size {text!r} (use e.g. 512MiB)")
    return int(match.group(1)) * _MEMORY_UNITS[match.group(2) or "B"]


@dataclass(frozen=True)
class PipelineConfig:
    """Engine settings. The scoring defaults (alpha, k, r, top_p, length
    bounds, coverage keep fraction) are the reported operating point of the
    method; changing them is an experiment, not a tweak."""

    alpha: float = 0.5
    k: float = 0.2
    r: int = 8
    top_p: float = 0.9
    min_len: int = 5
    max_len: int = 20
    coverage_keep_fraction: float = 0.8
    phrases_path: str | None = None
    backend: str = "mock"
    backend_url: str | None = None
    captions_path: str | None = None
    embeddings_path: str | None = None
    memory_budget: int = 512 << 20
    batch_size: int = 256
    jobs: int = 1
    global_seed: int = 0
    tie_break: str = "uid_ascending"

    def __post_init__(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigError(f"alpha must lie in [0, 1], got {self.alpha}")
        if not (0.0 < self.k <= 1.0):
            raise ConfigError(f"k must lie in (0, 1], got {self.k}")
        if self.r < 1:
            raise ConfigError(f"r must be a positive integer, got {self.r}")
        if not (0.0 < self.top_p <= 1.0):
            raise ConfigError(f"top_p must lie in (0, 1], got {self.top_p}")
        if self.min_len < 1:
            raise ConfigError(f"min_len must be a positive integer, got {self.min_len}")
        if self.max_len < self.min_len:
            raise ConfigError(
                f"max_len must be >= min_len, got {self.max_len} < {self.min_len}"
            )
        if not (0.0 < self.coverage_keep_fraction <= 1.0):
            raise ConfigError(
                f"coverage_keep_fraction must lie in (0, 1], got {self.coverage_keep_fraction}"
            )
        if self.backend not in ("mock", "file", "service"):
            raise ConfigError(f"backend must be mock, file, or service, got {self.backend!r}")
        if self.backend == "service" and not self.backend_url:
            raise ConfigError("service backend requires backend_url")
        if self.backend == "file" and not self.embeddings_path:
            raise ConfigError("file backend requires embeddings_path")
        if self.memory_budget < 1:
            raise ConfigError("memory_budget must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        if self.tie_break != "uid_ascending":
            raise ConfigError(f"unknown tie_break {self.tie_break!r}")


_INT_KEYS = {"r", "min_len", "max_len", "batch_size", "jobs", "global_seed"}
_FLOAT_KEYS = {"alpha", "k", "top_p", "coverage_keep_fraction"}
_STR_KEYS = {"phrases_path", "backend", "backend_url", "captions_path",
             "embeddings_path", "tie_break"}
_MEMORY_KEYS = {"memory_budget"}


def _coerce(key: str, raw: str):
    try:
        if key in _INT_KEYS:
            return int(raw)
        if key in _FLOAT_KEYS:
            return float(raw)
        if key in _MEMORY_KEYS:
            return parse_memory(raw)
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"config key {key!r}: {exc}") from exc
    return raw


def validate_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    """Build a PipelineConfig from an optional file plus explicit overrides.

    File format: one `key=value` per line, `#` starts a comment line, blank
    lines ignored. Unknown keys are rejected so typos fail loudly.
    """
    known = {f.name for f in fields(PipelineConfig)}
    values: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise IoError(f"config file not found: {path}")
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(f"config line {lineno}: expected key=value")
            key, _, raw = stripped.partition("=")
            key, raw = key.strip(), raw.strip()
            if key not in known:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"config line {lineno}: duplicate key {key!r}")
            values[key] = _coerce(key, raw)
    for key, value in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        if value is not None:
            values[key] = value
    try:
        return PipelineConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def with_overrides(config: PipelineConfig, **overrides) -> PipelineConfig:
    """Non-None overrides applied to an existing config (flags beat file)."""
    updates = {key: value for key, value in overrides.items() if value is not None}
    return replace(config, **updates) if updates else config
