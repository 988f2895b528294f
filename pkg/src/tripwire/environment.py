"""Deterministic model of a small cloud environment.

Hosts own process and filesystem targets; cloud services are targets of
their own. Every target advertises the injection capabilities a deploy
module may use on it. The model is immutable: ``apply_event`` returns a
new :class:`Environment` together with the placements the change killed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Iterable, Mapping

from .errors import DuplicateError, NotFoundError, ValidationError

EXTERNAL = "external"


class Capability(str, Enum):
    INJECT_HTTP_ENDPOINT = "inject-http-endpoint"
    INJECT_HTTP_HEADER = "inject-http-header"
    INJECT_COOKIE = "inject-cookie"
    INJECT_FILE_TOKEN = "inject-file-token"
    INJECT_ENV_VAR = "inject-env-var"
    CREATE_BUCKET_DECOY = "create-bucket-decoy"
    CREATE_SSH_DECOY = "create-ssh-decoy"

    @classmethod
    def parse(cls, name: str | Capability) -> Capability:
        try:
            return cls(name)
        except ValueError:
            raise ValidationError(f"unknown capability {name!r}") from None


class TargetKind(str, Enum):
    PROCESS = "process"
    HOST_FILESYSTEM = "host-filesystem"
    CLOUD_SERVICE = "cloud-service"
    DECOY_HOST = "decoy-host"


class EventKind(str, Enum):
    APP_REDEPLOYED = "app-redeployed"
    HOST_ADDED = "host-added"
    HOST_REMOVED = "host-removed"


@dataclass(frozen=True)
class Target:
    id: str
    kind: TargetKind
    capabilities: frozenset[Capability] = frozenset()
    parent_host: str | None = None

    @property
    def location(self) -> str:
        """Host the target lives on, or the target itself for top-level ones."""
        return self.parent_host or self.id

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "capabilities": sorted(c.value for c in self.capabilities),
            "parent_host": self.parent_host,
        }


@dataclass(frozen=True)
class HostSpec:
    id: str
    targets: tuple[Target, ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> HostSpec:
        host_id = _require(data, "id", "host")
        targets = []
        for raw in data.get("targets") or ():
            kind = TargetKind(raw.get("kind", TargetKind.PROCESS.value))
            if kind not in (TargetKind.PROCESS, TargetKind.HOST_FILESYSTEM):
                raise ValidationError(f"host target {raw.get('id')!r} has kind {kind.value}")
            targets.append(
                Target(
                    id=_require(raw, "id", "target"),
                    kind=kind,
                    capabilities=frozenset(Capability.parse(c) for c in raw.get("capabilities") or ()),
                    parent_host=host_id,
                )
            )
        return cls(id=host_id, targets=tuple(targets))

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "targets": [
                {"id": t.id, "kind": t.kind.value, "capabilities": sorted(c.value for c in t.capabilities)}
                for t in self.targets
            ],
        }


@dataclass(frozen=True)
class CloudServiceSpec:
    id: str
    capabilities: frozenset[Capability] = frozenset()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> CloudServiceSpec:
        return cls(
            id=_require(data, "id", "cloud service"),
            capabilities=frozenset(Capability.parse(c) for c in data.get("capabilities") or ()),
        )

    def to_target(self) -> Target:
        return Target(self.id, TargetKind.CLOUD_SERVICE, self.capabilities)


@dataclass(frozen=True)
class EnvironmentSpec:
    hosts: tuple[HostSpec, ...] = ()
    cloud_services: tuple[CloudServiceSpec, ...] = ()
    reachability: tuple[tuple[str, str], ...] = ()

    @classmethod
    def from_dict(cls, data: Mapping[str, Any] | None) -> EnvironmentSpec:
        data = data or {}
        unknown = set(data) - {"hosts", "cloud_services", "reachability"}
        if unknown:
            raise ValidationError(f"unknown environment keys: {sorted(unknown)}")
        pairs = []
        for pair in data.get("reachability") or ():
            if len(pair) != 2:
                raise ValidationError(f"reachability entry {pair!r} is not a pair")
            pairs.append((str(pair[0]), str(pair[1])))
        return cls(
            hosts=tuple(HostSpec.from_dict(h) for h in data.get("hosts") or ()),
            cloud_services=tuple(CloudServiceSpec.from_dict(c) for c in data.get("cloud_services") or ()),
            reachability=tuple(pairs),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "hosts": [h.to_dict() for h in self.hosts],
            "cloud_services": [
                {"id": c.id, "capabilities": sorted(x.value for x in c.capabilities)} for c in self.cloud_services
            ],
            "reachability": [list(p) for p in self.reachability],
        }


@dataclass(frozen=True)
class EnvironmentEvent:
    kind: EventKind
    target_id: str
    timestamp: int = 0
    # only for host-added: the host being declared
    host: HostSpec | None = None

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> EnvironmentEvent:
        if not isinstance(data, Mapping):
            raise ValidationError(f"event must be a mapping, got {data!r}")
        try:
            kind = EventKind(data["kind"])
        except (KeyError, ValueError):
            raise ValidationError(f"bad event kind in {dict(data)!r}") from None
        ts = data.get("timestamp", 0)
        if isinstance(ts, bool) or not isinstance(ts, int) or ts < 0:
            raise ValidationError(f"event timestamp {ts!r} is not a non-negative integer")
        host = data.get("host")
        return cls(
            kind=kind,
            target_id=str(_require(data, "target_id", "event")),
            timestamp=ts,
            host=HostSpec.from_dict(host) if host else None,
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind.value, "target_id": self.target_id, "timestamp": self.timestamp}
        if self.host is not None:
            out["host"] = self.host.to_dict()
        return out


@dataclass(frozen=True)
class Environment:
    """Immutable snapshot; targets are keyed by id."""

    hosts: frozenset[str] = frozenset()
    targets: Mapping[str, Target] = field(default_factory=dict)
    reachability: frozenset[tuple[str, str]] = frozenset()

    def __contains__(self, target_id: object) -> bool:
        return target_id in self.targets

    def target(self, target_id: str) -> Target:
        try:
            return self.targets[target_id]
        except KeyError:
            raise NotFoundError(f"unknown target {target_id!r}") from None

    def location(self, target_id: str) -> str:
        t = self.targets.get(target_id)
        return t.location if t is not None else target_id

    def target_ids(self) -> list[str]:
        return sorted(self.targets)

    def injectable_targets(self) -> set[str]:
        return {t.id for t in self.targets.values() if t.capabilities}

    def children(self, host_id: str) -> list[str]:
        return sorted(t.id for t in self.targets.values() if t.parent_host == host_id)

    def reachable(self, src: str, dst: str) -> bool:
        return (src, dst) in self.reachability

    def with_target(self, target: Target) -> Environment:
        if target.id in self.targets or target.id in self.hosts:
            raise DuplicateError(f"duplicate target id {target.id!r}")
        targets = dict(self.targets)
        targets[target.id] = target
        return replace(self, targets=targets)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hosts": sorted(self.hosts),
            "targets": [self.targets[t].to_dict() for t in self.target_ids()],
            "reachability": [list(p) for p in sorted(self.reachability)],
        }


def _require(data: Mapping[str, Any], key: str, what: str) -> Any:
    if key not in data or data[key] in (None, ""):
        raise ValidationError(f"{what} is missing {key!r}")
    return data[key]


def build_environment(spec: EnvironmentSpec | Mapping[str, Any]) -> Environment:
    if not isinstance(spec, EnvironmentSpec):
        spec = EnvironmentSpec.from_dict(spec)
    seen: set[str] = set()
    targets: dict[str, Target] = {}

    def claim(ident: str) -> None:
        if ident in seen:
            raise DuplicateError(f"duplicate target id {ident!r}")
        seen.add(ident)

    for host in spec.hosts:
        claim(host.id)
        for t in host.targets:
            claim(t.id)
            targets[t.id] = t
    for svc in spec.cloud_services:
        claim(svc.id)
        targets[svc.id] = svc.to_target()

    for src, dst in spec.reachability:
        for end in (src, dst):
            if end not in seen:
                raise ValidationError(f"reachability references unknown target {end!r}")
    return Environment(
        hosts=frozenset(h.id for h in spec.hosts),
        targets=targets,
        reachability=frozenset(spec.reachability),
    )


def enumerate_injection_points(env: Environment) -> list[tuple[str, Capability]]:
    return sorted(
        ((t.id, c) for t in env.targets.values() for c in t.capabilities),
        key=lambda pair: (pair[0], pair[1].value),
    )


def apply_event(
    env: Environment, event: EnvironmentEvent, placements: Iterable[Any] = ()
) -> tuple[Environment, list[str]]:
    """Apply one change event; return the new snapshot and invalidated placement ids.

    ``placements`` is any iterable of objects with ``id``, ``target_id`` and
    ``active`` attributes.
    """
    if event.kind is EventKind.HOST_ADDED:
        if event.host is None:
            raise ValidationError("host-added event carries no host declaration")
        if event.host.id != event.target_id:
            raise ValidationError("host-added target_id must equal the declared host id")
        if event.host.id in env.hosts or event.host.id in env.targets:
            raise DuplicateError(f"duplicate target id {event.host.id!r}")
        new = replace(env, hosts=env.hosts | {event.host.id})
        for t in event.host.targets:
            new = new.with_target(t)
        return new, []

    if event.kind is EventKind.APP_REDEPLOYED:
        target = env.target(event.target_id)
        if target.kind is not TargetKind.PROCESS:
            raise ValidationError(f"app-redeployed needs a process target, got {target.kind.value}")
        dead = {target.id}
        return env, _invalidated(placements, dead)

    # host-removed
    if event.target_id not in env.hosts:
        raise NotFoundError(f"unknown host {event.target_id!r}")
    dead = {event.target_id} | set(env.children(event.target_id))
    # decoy hosts materialized on a removed target go with it
    dead |= {t.id for t in env.targets.values() if t.kind is TargetKind.DECOY_HOST and t.parent_host in dead}
    targets = {k: v for k, v in env.targets.items() if k not in dead}
    reach = frozenset(p for p in env.reachability if p[0] not in dead and p[1] not in dead)
    new = Environment(hosts=env.hosts - {event.target_id}, targets=targets, reachability=reach)
    return new, _invalidated(placements, dead)


def _invalidated(placements: Iterable[Any], dead: set[str]) -> list[str]:
    return sorted(p.id for p in placements if p.active and p.target_id in dead)
