"""Run configuration: one structured-text file, every default overridable.

A run config names the dataset, the source checkpoint, the methods and
domains to evaluate, and the knobs of both adaptation stages. YAML (a strict
superset of JSON here) is the on-disk form; unknown keys are rejected so
typos fail loudly instead of silently running defaults.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigError
from .feedback_adapt import SELECTION_POLICIES, PostAdaptConfig
from .oracle import CorrectionPolicy
from .pre_adapt import PreAdaptConfig
from .styleaug import AugmentationRanges

ALL_METHODS = (
    "no_tta",
    "tbn",
    "tent",
    "hitta",
    "hitta_no_div",
    "hitta_no_hf",
    "hitta_entropy_weight",
)


@dataclass
class RunConfig:
    """Everything a stream or matrix run needs, in one place."""

    dataset_root: str = "data/synthetic"
    checkpoint: str = "runs/source/checkpoint.zip"
    out_dir: str = "runs/matrix"
    seed: int = 0
    methods: list[str] = field(default_factory=lambda: list(ALL_METHODS))
    domains: list[str] | None = None     # None = every non-source domain, manifest order
    limit: int | None = None             # cap samples per domain (quick runs)
    reset_per_domain: bool = False       # default: carry state across domain boundaries
    selection_policy: str = "oracle_dsc"
    correction: CorrectionPolicy = field(default_factory=CorrectionPolicy)
    pre: PreAdaptConfig = field(default_factory=PreAdaptConfig)
    post: PostAdaptConfig = field(default_factory=PostAdaptConfig)

    def __post_init__(self) -> None:
        unknown = [m for m in self.methods if m not in ALL_METHODS]
        if unknown:
            raise ConfigError(f"unknown methods {unknown}; choose from {list(ALL_METHODS)}")
        if not self.methods:
            raise ConfigError("at least one method required")
        if self.limit is not None and self.limit < 1:
            raise ConfigError(f"limit must be >= 1 if set, got {self.limit}")
        if self.selection_policy not in SELECTION_POLICIES:
            raise ConfigError(
                f"selection_policy must be one of {SELECTION_POLICIES}, got {self.selection_policy!r}"
            )

    def to_dict(self) -> dict:
        data = _as_plain(dataclasses.asdict(self))
        # where results land is not part of run identity: two runs of the
        # same config into different directories must fingerprint the same
        data.pop("out_dir")
        return data

    def fingerprint(self) -> str:
        return hashlib.sha256(canonical_json(self.to_dict()).encode()).hexdigest()[:16]


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _as_plain(obj: object) -> object:
    """Recursively reduce to JSON-safe plain types."""
    if isinstance(obj, dict):
        return {k: _as_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_as_plain(v) for v in obj]
    return obj


_NESTED = {
    "pre": PreAdaptConfig,
    "post": PostAdaptConfig,
    "correction": CorrectionPolicy,
}


def _build_nested(cls: type, data: dict, where: str):
    legal = {f.name for f in fields(cls)}
    unknown = set(data) - legal
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)} in '{where}' block")
    if cls in (PreAdaptConfig, PostAdaptConfig) and "ranges" in data:
        data = dict(data, ranges=_build_nested(AugmentationRanges, data["ranges"], f"{where}.ranges"))
    kwargs = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
    return cls(**kwargs)


def run_config_from_dict(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError(f"run config must be a mapping, got {type(data).__name__}")
    legal = {f.name for f in fields(RunConfig)}
    unknown = set(data) - legal
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}; legal keys: {sorted(legal)}")
    kwargs: dict = {}
    for key, value in data.items():
        if key in _NESTED:
            if not isinstance(value, dict):
                raise ConfigError(f"'{key}' must be a mapping of overrides")
            kwargs[key] = _build_nested(_NESTED[key], value, key)
        else:
            kwargs[key] = value
    return RunConfig(**kwargs)


def load_run_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    return run_config_from_dict(data)


def save_config_snapshot(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
    return path
