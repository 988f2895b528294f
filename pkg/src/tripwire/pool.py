"""Tripwire definitions, the pool that stores them, and instantiation."""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping

from .environment import Capability
from .errors import DuplicateError, NotFoundError, ValidationError


class Role(str, Enum):
    LURE = "lure"
    DECOY = "decoy"


class SecretKind(str, Enum):
    ACCESS_TOKEN = "access-token"
    PRIVATE_KEY = "private-key"
    NONE = "none"


@dataclass(frozen=True)
class RoleSpec:
    role: Role
    capability: Capability
    min_placements: int = 1
    max_placements: int = 1

    def __post_init__(self) -> None:
        if self.min_placements < 1:
            raise ValidationError(f"{self.role.value} role needs min_placements >= 1")
        if self.max_placements < self.min_placements:
            raise ValidationError(f"{self.role.value} role has max_placements < min_placements")
        if self.role is Role.DECOY and (self.min_placements, self.max_placements) != (1, 1):
            raise ValidationError("decoy role must have min_placements = max_placements = 1")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> RoleSpec:
        try:
            role = Role(data["role"])
        except (KeyError, ValueError):
            raise ValidationError(f"role spec has bad role: {dict(data)!r}") from None
        if "capability" not in data:
            raise ValidationError("role spec is missing 'capability'")
        lo, hi = data.get("min_placements", 1), data.get("max_placements", data.get("min_placements", 1))
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in (lo, hi)):
            raise ValidationError(f"role placement bounds must be integers, got {lo!r}..{hi!r}")
        return cls(role=role, capability=Capability.parse(data["capability"]), min_placements=lo, max_placements=hi)

    def to_dict(self) -> dict[str, Any]:
        return {
            "role": self.role.value,
            "capability": self.capability.value,
            "min_placements": self.min_placements,
            "max_placements": self.max_placements,
        }


@dataclass(frozen=True)
class TripwireDefinition:
    id: str
    name: str
    decoy_role: RoleSpec
    lure_roles: tuple[RoleSpec, ...] = ()
    secret_kind: SecretKind = SecretKind.NONE
    description: str = ""

    def __post_init__(self) -> None:
        if self.decoy_role.role is not Role.DECOY:
            raise ValidationError(f"{self.id}: decoy_role must have role=decoy")
        for r in self.lure_roles:
            if r.role is not Role.LURE:
                raise ValidationError(f"{self.id}: exactly one decoy role is allowed")
        if self.lure_roles and self.secret_kind is SecretKind.NONE:
            raise ValidationError(f"{self.id}: lures need a linking secret (secret_kind != none)")

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TripwireDefinition:
        for key in ("id", "decoy_role"):
            if key not in data:
                raise ValidationError(f"tripwire definition is missing {key!r}")
        decoy = data["decoy_role"]
        if isinstance(decoy, list):
            if len(decoy) != 1:
                raise ValidationError(f"{data['id']}: exactly one decoy role is allowed, got {len(decoy)}")
            decoy = decoy[0]
        try:
            secret_kind = SecretKind(data.get("secret_kind", SecretKind.NONE.value))
        except ValueError:
            raise ValidationError(f"{data['id']}: bad secret_kind {data.get('secret_kind')!r}") from None
        return cls(
            id=str(data["id"]),
            name=str(data.get("name", data["id"])),
            decoy_role=RoleSpec.from_dict({"role": "decoy", **decoy}),
            lure_roles=tuple(RoleSpec.from_dict({"role": "lure", **r}) for r in data.get("lure_roles") or ()),
            secret_kind=secret_kind,
            description=str(data.get("description", "")),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "name": self.name,
            "decoy_role": self.decoy_role.to_dict(),
            "lure_roles": [r.to_dict() for r in self.lure_roles],
            "secret_kind": self.secret_kind.value,
            "description": self.description,
        }


@dataclass
class TripwireInstance:
    instance_id: str
    definition_id: str
    secret: str
    created_at: int = 0
    decoy_placement: str | None = None
    lure_placements: list[str] = field(default_factory=list)
    retired: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "instance_id": self.instance_id,
            "definition_id": self.definition_id,
            "secret": self.secret,
            "decoy_placement": self.decoy_placement,
            "lure_placements": list(self.lure_placements),
            "created_at": self.created_at,
            "retired": self.retired,
        }


class SecretStream:
    """Seeded secret source; a counter suffix makes every secret in a run distinct."""

    def __init__(self, seed: int):
        self._rng = random.Random(seed)
        self._counter = 0

    def next(self, kind: SecretKind) -> str:
        if kind is SecretKind.NONE:
            return ""
        self._counter += 1
        if kind is SecretKind.ACCESS_TOKEN:
            return f"{self._rng.getrandbits(96):024x}{self._counter:08x}"
        return f"SHA256:{self._rng.getrandbits(160):040x}{self._counter:08x}"


class TripwirePool:
    def __init__(self, definitions: Iterable[TripwireDefinition] = ()):
        self._defs: dict[str, TripwireDefinition] = {}
        self._counters: dict[str, int] = {}
        if definitions:
            self.replace(list(definitions))

    def __len__(self) -> int:
        return len(self._defs)

    def __contains__(self, definition_id: object) -> bool:
        return definition_id in self._defs

    def definitions(self) -> list[TripwireDefinition]:
        return [self._defs[k] for k in sorted(self._defs)]

    def get(self, definition_id: str) -> TripwireDefinition:
        try:
            return self._defs[definition_id]
        except KeyError:
            raise NotFoundError(f"unknown tripwire definition {definition_id!r}") from None

    def replace(self, definitions: list[TripwireDefinition]) -> None:
        staged: dict[str, TripwireDefinition] = {}
        for d in definitions:
            if d.id in staged:
                raise DuplicateError(f"duplicate tripwire definition {d.id!r}")
            staged[d.id] = d
        self._defs = staged

    def load_definitions(self, document: Any) -> list[TripwireDefinition]:
        """Validate a catalog document and swap it in; the old pool survives any error."""
        defs = parse_catalog(document)
        self.replace(defs)
        return self.definitions()

    def serialize(self) -> dict[str, Any]:
        return {"tripwires": [d.to_dict() for d in self.definitions()]}

    def instantiate(self, definition_id: str, secrets: SecretStream, created_at: int = 0) -> TripwireInstance:
        d = self.get(definition_id)
        n = self._counters.get(definition_id, 0) + 1
        self._counters[definition_id] = n
        return TripwireInstance(
            instance_id=f"{definition_id}#{n}",
            definition_id=definition_id,
            secret=secrets.next(d.secret_kind),
            created_at=created_at,
        )


def parse_catalog(document: Any) -> list[TripwireDefinition]:
    if document is None:
        return []
    if isinstance(document, Mapping):
        unknown = set(document) - {"tripwires"}
        if unknown:
            raise ValidationError(f"unknown catalog keys: {sorted(unknown)}")
        document = document.get("tripwires") or []
    if not isinstance(document, list):
        raise ValidationError("catalog must be a list of definitions or {tripwires: [...]}")
    defs = []
    for entry in document:
        if not isinstance(entry, Mapping):
            raise ValidationError(f"definition entry {entry!r} is not a mapping")
        defs.append(TripwireDefinition.from_dict(entry))
    return defs
