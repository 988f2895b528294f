"""Deploy modules (DMs) and the registry they register themselves in.

A DM injects one kind of deceptive component (its capability) into the
targets its selector admits and, if alarm-capable, watches it. The
registry also owns the placement table, since placements only ever come
into existence through a DM.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from typing import Any, Mapping

from .alarms import RawAlarm
from .environment import Capability, Environment, Target, TargetKind
from .errors import (
    CapabilityMismatchError,
    DuplicateError,
    IneligibleTargetError,
    NotFoundError,
    ValidationError,
)
from .pool import Role, TripwireInstance, TripwirePool


@dataclass(frozen=True)
class DeployModuleDescriptor:
    id: str
    capability: Capability
    # explicit target ids; None means "any target"
    targets: frozenset[str] | None = None
    # kind filter; None means "any kind"
    kinds: frozenset[TargetKind] | None = None
    alarm_capable: bool = True

    def selects(self, target: Target) -> bool:
        if self.targets is not None and target.id not in self.targets:
            return False
        if self.kinds is not None and target.kind not in self.kinds:
            return False
        return self.capability in target.capabilities

    def eligible(self, env: Environment) -> list[str]:
        return [tid for tid in env.target_ids() if self.selects(env.targets[tid])]

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> DeployModuleDescriptor:
        if "id" not in data or "capability" not in data:
            raise ValidationError("deploy module needs 'id' and 'capability'")
        sel = data.get("target_selector") or {}
        targets = sel.get("targets", data.get("targets"))
        kinds = sel.get("kinds", data.get("kinds"))
        try:
            kind_set = frozenset(TargetKind(k) for k in kinds) if kinds is not None else None
        except ValueError as exc:
            raise ValidationError(str(exc)) from None
        return cls(
            id=str(data["id"]),
            capability=Capability.parse(data["capability"]),
            targets=frozenset(targets) if targets is not None else None,
            kinds=kind_set,
            alarm_capable=bool(data.get("alarm_capable", True)),
        )

    def to_dict(self) -> dict[str, Any]:
        selector: dict[str, Any] = {}
        if self.targets is not None:
            selector["targets"] = sorted(self.targets)
        if self.kinds is not None:
            selector["kinds"] = sorted(k.value for k in self.kinds)
        return {
            "id": self.id,
            "capability": self.capability.value,
            "target_selector": selector,
            "alarm_capable": self.alarm_capable,
        }


@dataclass(frozen=True)
class Placement:
    id: str
    dm_id: str
    tripwire_instance_id: str
    role: Role
    target_id: str
    payload: str
    created_at: int = 0
    active: bool = True
    # decoy host created by a create-ssh-decoy DM, if any
    materialized_target: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "dm_id": self.dm_id,
            "tripwire_instance_id": self.tripwire_instance_id,
            "role": self.role.value,
            "target_id": self.target_id,
            "payload": self.payload,
            "created_at": self.created_at,
            "active": self.active,
            "materialized_target": self.materialized_target,
        }


@dataclass(frozen=True)
class AccessEvent:
    placement_id: str
    accessor: str
    observables: Mapping[str, str] = field(default_factory=dict)
    timestamp: int = 0


def render_payload(capability: Capability, instance: TripwireInstance, target_id: str) -> str:
    """Synthetic payload string; lure payloads embed the linking secret verbatim."""
    s = instance.secret
    if capability is Capability.INJECT_FILE_TOKEN:
        return f"file:{target_id}:/home/app/.credentials:token={s}"
    if capability is Capability.INJECT_ENV_VAR:
        return f"env:{target_id}:ACCESS_TOKEN={s}"
    if capability is Capability.INJECT_HTTP_HEADER:
        return f"header:{target_id}:X-Access-Token: {s}"
    if capability is Capability.INJECT_COOKIE:
        return f"cookie:{target_id}:session_token={s}"
    if capability is Capability.INJECT_HTTP_ENDPOINT:
        return f"endpoint:{target_id}:/internal/{instance.instance_id.replace('#', '-')}|secret={s}"
    if capability is Capability.CREATE_BUCKET_DECOY:
        return f"bucket:{target_id}:{instance.instance_id.replace('#', '-')}|secret={s}"
    return f"ssh:{target_id}:{instance.instance_id.replace('#', '-')}|key={s}"


class DeployModuleRegistry:
    """The DM registry plus the placement table.

    ``pool`` lets :meth:`deploy` check a DM's capability against the role the
    tripwire definition requires.
    """

    def __init__(self, pool: TripwirePool | None = None):
        self.pool = pool
        self._dms: dict[str, DeployModuleDescriptor] = {}
        self._placements: dict[str, Placement] = {}
        self._watched: set[str] = set()
        self.decoy_hosts: dict[str, Target] = {}
        self.dropped_accesses: list[AccessEvent] = []
        self._lock = threading.RLock()
        self._seq = 0

    def __len__(self) -> int:
        return len(self._dms)

    def register(self, descriptor: DeployModuleDescriptor) -> str:
        with self._lock:
            if descriptor.id in self._dms:
                raise DuplicateError(f"deploy module {descriptor.id!r} already registered")
            self._dms[descriptor.id] = descriptor
        return descriptor.id

    def get(self, dm_id: str) -> DeployModuleDescriptor:
        try:
            return self._dms[dm_id]
        except KeyError:
            raise NotFoundError(f"unknown deploy module {dm_id!r}") from None

    def modules(self) -> list[DeployModuleDescriptor]:
        return [self._dms[k] for k in sorted(self._dms)]

    def query(self, capability: Capability, env: Environment) -> list[tuple[str, list[str]]]:
        return [(dm.id, dm.eligible(env)) for dm in self.modules() if dm.capability is capability]

    # placements

    def placement(self, placement_id: str) -> Placement:
        try:
            return self._placements[placement_id]
        except KeyError:
            raise NotFoundError(f"unknown placement {placement_id!r}") from None

    def placements(self, *, active_only: bool = False) -> list[Placement]:
        ps = [self._placements[k] for k in sorted(self._placements)]
        return [p for p in ps if p.active] if active_only else ps

    def deploy(
        self,
        dm_id: str,
        instance: TripwireInstance,
        role: Role | str,
        target_id: str,
        payload: str | None,
        env: Environment,
        *,
        timestamp: int = 0,
    ) -> Placement:
        role = Role(role)
        dm = self.get(dm_id)
        if self.pool is not None and instance.definition_id in self.pool:
            definition = self.pool.get(instance.definition_id)
            required = (
                {definition.decoy_role.capability}
                if role is Role.DECOY
                else {r.capability for r in definition.lure_roles}
            )
            if dm.capability not in required:
                raise CapabilityMismatchError(
                    f"{dm_id} provides {dm.capability.value}; {instance.definition_id} {role.value} "
                    f"needs {sorted(c.value for c in required) or 'no lures'}"
                )
        if target_id not in env:
            raise IneligibleTargetError(f"target {target_id!r} is not in the current environment")
        if not dm.selects(env.target(target_id)):
            raise IneligibleTargetError(f"target {target_id!r} is not eligible for {dm_id}")
        if payload is None:
            payload = render_payload(dm.capability, instance, target_id)

        with self._lock:
            self._seq += 1
            pid = f"p{self._seq:04d}"
            materialized = None
            if dm.capability is Capability.CREATE_SSH_DECOY:
                materialized = f"{target_id}/ssh-{self._seq:04d}"
                self.decoy_hosts[pid] = Target(materialized, TargetKind.DECOY_HOST, frozenset(), target_id)
            placement = Placement(
                id=pid,
                dm_id=dm_id,
                tripwire_instance_id=instance.instance_id,
                role=role,
                target_id=target_id,
                payload=payload,
                created_at=timestamp,
                materialized_target=materialized,
            )
            self._placements[pid] = placement
            if dm.alarm_capable:
                self._watched.add(pid)
        return placement

    def retract(self, placement_id: str) -> Placement:
        with self._lock:
            p = self.placement(placement_id)
            if p.active:
                p = replace(p, active=False)
                self._placements[placement_id] = p
                self._watched.discard(placement_id)
                self.decoy_hosts.pop(placement_id, None)
        return p

    def observe_access(self, event: AccessEvent) -> RawAlarm | None:
        p = self._placements.get(event.placement_id)
        if p is None or not p.active or event.placement_id not in self._watched or event.timestamp < p.created_at:
            self.dropped_accesses.append(event)
            return None
        return RawAlarm(
            placement_id=p.id,
            dm_id=p.dm_id,
            accessor=event.accessor,
            observables=dict(event.observables),
            timestamp=event.timestamp,
        )
