"""Run configuration.

Values come from three layers: built-in defaults, an optional flat
``key = value`` file, and command-line flags, later layers winning.  The
only value read from the environment is the provider API key, and it is
never written to manifests.

Example file::

    # patchloc.conf
    cache_dir = /var/cache/patchloc
    batch_size = 10
    rounds = 10
    provider = live
    model_id = gpt-4o-mini
"""

from __future__ import annotations

import configparser
import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import PreconditionError

PROVIDERS = ("live", "mock", "replay")


@dataclass
class RunConfig:
    cache_dir: str = ".patchloc-cache"
    out_dir: str = "patchloc-out"
    batch_size: int = 10
    rounds: int = 10
    max_candidates: int = 2000
    max_contexts: int = 20
    token_budget: int = 8000
    model_id: str = "gpt-4o-mini"
    temperature: float = 0.7
    seed: int = 0
    shuffle: bool = False
    provider: str = "live"
    mock_script: str | None = None
    literal_algorithm1: bool = False
    jobs: int = os.cpu_count() or 1
    use_cache: bool = True
    refresh: bool = False
    templates: str | None = None
    source: str = "local_cache"
    dataset: str | None = None
    llm_base_url: str | None = None
    nvd_base_url: str | None = None
    osv_base_url: str | None = None

    def validate(self) -> RunConfig:
        if self.batch_size < 2:
            raise PreconditionError(f"batch_size must be at least 2, got {self.batch_size}")
        if self.rounds < 1:
            raise PreconditionError(f"rounds must be at least 1, got {self.rounds}")
        if self.provider not in PROVIDERS:
            raise PreconditionError(f"provider must be one of {PROVIDERS}, got {self.provider!r}")
        if self.provider == "mock" and not self.mock_script:
            raise PreconditionError("provider 'mock' needs --mock-script")
        if self.max_candidates < 1 or self.token_budget < 1 or self.jobs < 1:
            raise PreconditionError("max_candidates, token_budget and jobs must be positive")
        return self

    def snapshot(self) -> dict:
        """Settings that affect results; machine-specific ones are left out."""
        d = dataclasses.asdict(self)
        for key in ("cache_dir", "out_dir", "jobs", "dataset", "mock_script", "templates"):
            d.pop(key)
        return d


_TYPES = {f.name: f.type for f in fields(RunConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    value = raw.strip()
    if kind == "bool":
        lowered = value.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise PreconditionError(f"config {key}: expected a boolean, got {raw!r}")
    if kind == "int":
        return int(value)
    if kind == "float":
        return float(value)
    if "None" in kind and value.lower() in ("", "none"):
        return None
    return value


def read_config_file(path) -> dict:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    text = Path(path).read_text(encoding="utf-8")
    parser.read_string("[patchloc]\n" + text, source=str(path))
    values = {}
    for key, raw in parser["patchloc"].items():
        if key not in _TYPES:
            raise PreconditionError(f"{path}: unknown config key {key!r}")
        if key.endswith("api_key"):
            raise PreconditionError("API keys are read from the environment only")
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise PreconditionError(f"{path}: bad value for {key}: {exc}") from exc
    return values


def build_config(file_path=None, overrides: dict | None = None) -> RunConfig:
    values = {}
    if file_path:
        values.update(read_config_file(file_path))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return RunConfig(**values).validate()
