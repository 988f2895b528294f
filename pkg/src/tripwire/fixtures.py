"""Bundled environments, catalogs and scenarios (also used by the CLI demo)."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Any

import yaml

from .deploy import DeployModuleDescriptor
from .environment import EnvironmentSpec
from .errors import ValidationError
from .pool import TripwireDefinition, parse_catalog


def load_document(path: str | Path) -> Any:
    """Read a YAML or JSON file (JSON is valid YAML, but errors read better this way)."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix == ".json":
            return json.loads(text)
        return yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ValidationError(f"{path}: {exc}") from None


def data_path(name: str) -> Path:
    return Path(str(resources.files("tripwire") / "data" / name))


def _bundled(name: str) -> Any:
    return load_document(data_path(name))


def env_a_spec() -> EnvironmentSpec:
    return EnvironmentSpec.from_dict(_bundled("env_a.yaml"))


def env_ssh_spec() -> EnvironmentSpec:
    return EnvironmentSpec.from_dict(_bundled("env_ssh.yaml"))


def builtin_catalog() -> list[TripwireDefinition]:
    return parse_catalog(_bundled("catalog.yaml"))


def extended_catalog() -> list[TripwireDefinition]:
    return parse_catalog(_bundled("catalog_extended.yaml"))


def parse_deploy_modules(document: Any) -> list[DeployModuleDescriptor]:
    if isinstance(document, dict):
        document = document.get("deploy_modules") or []
    if not isinstance(document, list):
        raise ValidationError("deploy module document must be a list")
    return [DeployModuleDescriptor.from_dict(d) for d in document]


def default_deploy_modules() -> list[DeployModuleDescriptor]:
    return parse_deploy_modules(_bundled("dms.yaml"))


def s1_scenario() -> list[dict[str, Any]]:
    return _bundled("s1.yaml")
