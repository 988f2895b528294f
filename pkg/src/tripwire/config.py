"""Run configuration: config file, then TRIPWIRE_* environment variables, then CLI flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from .alarms import DEFAULT_BUCKET_MS
from .controller import Budget
from .errors import ValidationError
from .reconstruction import ReconstructionConfig

ENV_PREFIX = "TRIPWIRE_"


@dataclass(frozen=True)
class RunConfig:
    env_path: str | None = None
    tripwires_path: str | None = None
    deploy_modules_path: str | None = None
    scenario_path: str | None = None
    events_path: str | None = None
    scenario_length: int = 5
    seed: int = 42
    budget: Budget = field(default_factory=Budget)
    bucket_ms: int = DEFAULT_BUCKET_MS
    reconstruction: ReconstructionConfig = field(default_factory=ReconstructionConfig)
    # forged alarms injected per run
    forged_alarm_rate: int = 0
    out_dir: str = "out"
    # optional periodic reconcile for `serve`; event-driven reconcile is always on
    reconcile_interval_ms: int | None = None

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> RunConfig:
        return apply_overrides(cls(), data)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if hasattr(v, "to_dict") else v
        return out


_INT_KEYS = {"scenario_length", "seed", "bucket_ms", "forged_alarm_rate", "reconcile_interval_ms"}
_BUDGET_KEYS = {"max_components_per_target", "max_instances_per_definition"}
_RECON_KEYS = {"window", "max_depth", "max_candidates_per_hop", "max_paths"}


def _int(key: str, value: Any) -> int | None:
    if value is None or value == "":
        return None
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ValidationError(f"config key {key} needs an integer, got {value!r}") from None


def apply_overrides(config: RunConfig, data: Mapping[str, Any]) -> RunConfig:
    """Overlay flat or nested keys; unknown keys are rejected."""
    plain: dict[str, Any] = {}
    budget = config.budget.to_dict()
    recon = config.reconstruction.to_dict()
    names = {f.name for f in fields(RunConfig)}
    for key, value in data.items():
        if key == "budget" and isinstance(value, Mapping):
            for k, v in value.items():
                if k not in _BUDGET_KEYS:
                    raise ValidationError(f"unknown budget key {k!r}")
                budget[k] = _int(k, v)
        elif key == "reconstruction" and isinstance(value, Mapping):
            for k, v in value.items():
                if k not in _RECON_KEYS:
                    raise ValidationError(f"unknown reconstruction key {k!r}")
                recon[k] = _int(k, v)
        elif key in _BUDGET_KEYS:
            budget[key] = _int(key, value)
        elif key in _RECON_KEYS:
            recon[key] = _int(key, value)
        elif key in names:
            plain[key] = _int(key, value) if key in _INT_KEYS else (None if value is None else str(value))
        else:
            raise ValidationError(f"unknown config key {key!r}")
    return replace(config, budget=Budget(**budget), reconstruction=ReconstructionConfig(**recon), **plain)


def env_overrides(environ: Mapping[str, str] | None = None) -> dict[str, str]:
    environ = os.environ if environ is None else environ
    return {k[len(ENV_PREFIX):].lower(): v for k, v in environ.items() if k.startswith(ENV_PREFIX)}


def load_config(
    path: str | Path | None = None,
    cli: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    config = RunConfig()
    if path:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(doc, Mapping):
            raise ValidationError(f"{path}: config must be a mapping")
        config = apply_overrides(config, doc)
    config = apply_overrides(config, env_overrides(environ))
    if cli:
        config = apply_overrides(config, {k: v for k, v in cli.items() if v is not None})
    return config
