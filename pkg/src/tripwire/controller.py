"""Deployment controller: plan, execute, and reconcile tripwire placements.

Planning is greedy coverage maximization. Each step takes the action that
covers the most injectable targets not yet hosting a deceptive component;
ties go to the lexicographically smallest (definition, target, dm). A new
instance is always planned whole (decoy plus every lure role's minimum),
so the plan never contains a partial instance.
"""

from __future__ import annotations

import logging
import sys
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Protocol

from .deploy import DeployModuleRegistry, Placement
from .environment import (
    Environment,
    EnvironmentEvent,
    TargetKind,
    apply_event,
)
from .errors import TripwireError, ValidationError
from .graph import AttackGraph
from .pool import Role, SecretStream, TripwireDefinition, TripwireInstance, TripwirePool

log = logging.getLogger(__name__)

DEFAULT_MAX_COMPONENTS_PER_TARGET = 3
DEFAULT_MAX_INSTANCES_PER_DEFINITION = 5


@dataclass(frozen=True)
class Budget:
    max_components_per_target: int = DEFAULT_MAX_COMPONENTS_PER_TARGET
    max_instances_per_definition: int = DEFAULT_MAX_INSTANCES_PER_DEFINITION

    def __post_init__(self) -> None:
        if self.max_components_per_target < 0:
            raise ValidationError("max_components_per_target must be >= 0")
        if self.max_instances_per_definition < 1:
            raise ValidationError("max_instances_per_definition must be >= 1")

    @classmethod
    def unlimited(cls) -> Budget:
        return cls(sys.maxsize, sys.maxsize)

    def to_dict(self) -> dict[str, int]:
        return {
            "max_components_per_target": self.max_components_per_target,
            "max_instances_per_definition": self.max_instances_per_definition,
        }


@dataclass(frozen=True)
class PlanAction:
    definition_id: str
    role: Role
    dm_id: str
    target_id: str
    # an existing instance id, or "+N" for the N-th instance this plan creates
    instance: str
    role_index: int = -1

    def to_dict(self) -> dict[str, Any]:
        return {
            "definition_id": self.definition_id,
            "role": self.role.value,
            "dm_id": self.dm_id,
            "target_id": self.target_id,
            "instance": self.instance,
        }


@dataclass(frozen=True)
class DeploymentPlan:
    actions: tuple[PlanAction, ...] = ()
    budget: Budget = field(default_factory=Budget)
    # existing instances that cannot be restored and must be retired
    retire: tuple[str, ...] = ()

    def __len__(self) -> int:
        return len(self.actions)

    def to_dict(self) -> dict[str, Any]:
        return {
            "actions": [a.to_dict() for a in self.actions],
            "budget": self.budget.to_dict(),
            "retire": list(self.retire),
        }


@dataclass(frozen=True)
class CoverageReport:
    covered_targets: frozenset[str]
    injectable_targets: frozenset[str]
    ratio: float

    def to_dict(self) -> dict[str, Any]:
        return {
            "covered_targets": sorted(self.covered_targets),
            "injectable_targets": sorted(self.injectable_targets),
            "ratio": self.ratio,
        }


@dataclass
class ReconcileOutcome:
    invalidated: list[str] = field(default_factory=list)
    retracted: list[str] = field(default_factory=list)
    retired_instances: list[str] = field(default_factory=list)
    deployed: list[Placement] = field(default_factory=list)
    actions: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "invalidated": list(self.invalidated),
            "retracted": list(self.retracted),
            "retired_instances": list(self.retired_instances),
            "deployed": [p.to_dict() for p in self.deployed],
            "actions": self.actions,
        }


def coverage(env: Environment, placements: Iterable[Placement]) -> CoverageReport:
    injectable = frozenset(env.injectable_targets())
    covered = frozenset(p.target_id for p in placements if p.active and p.target_id in injectable)
    ratio = len(covered) / len(injectable) if injectable else 1.0
    return CoverageReport(covered, injectable, ratio)


@dataclass
class _InstanceSlot:
    """Planner-side view of one instance: which targets it already uses, lures per role."""

    ref: str
    definition: TripwireDefinition
    targets: set[str]
    lure_counts: list[int]


class PlacementStrategy(Protocol):
    def plan(
        self,
        env: Environment,
        pool: TripwirePool,
        registry: DeployModuleRegistry,
        budget: Budget,
        instances: Iterable[TripwireInstance] = (),
    ) -> DeploymentPlan: ...


class GreedyCoverage:
    def plan(
        self,
        env: Environment,
        pool: TripwirePool,
        registry: DeployModuleRegistry,
        budget: Budget,
        instances: Iterable[TripwireInstance] = (),
    ) -> DeploymentPlan:
        active = [p for p in registry.placements(active_only=True) if p.target_id in env]
        load = Counter(p.target_id for p in active)
        injectable = env.injectable_targets()
        covered = {p.target_id for p in active} & injectable
        by_instance: dict[str, list[Placement]] = {}
        for p in active:
            by_instance.setdefault(p.tripwire_instance_id, []).append(p)

        slots: list[_InstanceSlot] = []
        per_def = Counter()
        for inst in sorted((i for i in instances if not i.retired), key=lambda i: i.instance_id):
            if inst.definition_id not in pool:
                continue
            d = pool.get(inst.definition_id)
            ps = by_instance.get(inst.instance_id, [])
            counts = [0] * len(d.lure_roles)
            for p in ps:
                if p.role is Role.LURE:
                    counts[_role_index(d, registry.get(p.dm_id).capability)] += 1
            slots.append(_InstanceSlot(inst.instance_id, d, {p.target_id for p in ps}, counts))
            per_def[d.id] += 1

        actions: list[PlanAction] = []
        retire: list[str] = []

        # restore existing instances that fell below a lure minimum
        for slot in slots:
            for ri, role in enumerate(slot.definition.lure_roles):
                need = role.min_placements - slot.lure_counts[ri]
                if need <= 0:
                    continue
                picks = _pick_lures(env, registry, budget, load, covered, role, need, slot.targets)
                if picks is None:
                    retire.append(slot.ref)
                    actions = [a for a in actions if a.instance != slot.ref]
                    break
                for dm_id, tid in picks:
                    actions.append(PlanAction(slot.definition.id, Role.LURE, dm_id, tid, slot.ref, ri))
                    slot.targets.add(tid)
                    slot.lure_counts[ri] += 1
                    load[tid] += 1
                    if tid in injectable:
                        covered.add(tid)
        slots = [s for s in slots if s.ref not in retire]

        new_count = 0
        while True:
            best: tuple[int, tuple, list[PlanAction], _InstanceSlot | None] | None = None
            for d in pool.definitions():
                if per_def[d.id] < budget.max_instances_per_definition:
                    for dm_id, eligible in registry.query(d.decoy_role.capability, env):
                        for tid in eligible:
                            if load[tid] >= budget.max_components_per_target:
                                continue
                            lure_actions = []
                            used = {tid}
                            trial_load = load.copy()
                            trial_load[tid] += 1
                            ok = True
                            for ri, role in enumerate(d.lure_roles):
                                picks = _pick_lures(env, registry, budget, trial_load, covered, role, role.min_placements, used)
                                if picks is None:
                                    ok = False
                                    break
                                for l_dm, l_tid in picks:
                                    lure_actions.append(PlanAction(d.id, Role.LURE, l_dm, l_tid, "", ri))
                                    used.add(l_tid)
                                    trial_load[l_tid] += 1
                            if not ok:
                                continue
                            gain = len((used & injectable) - covered)
                            key = (d.id, tid, dm_id, 0)
                            acts = [PlanAction(d.id, Role.DECOY, dm_id, tid, "")] + lure_actions
                            if _better(gain, key, best):
                                best = (gain, key, acts, None)
                for slot in slots:
                    if slot.definition.id != d.id:
                        continue
                    for ri, role in enumerate(d.lure_roles):
                        if slot.lure_counts[ri] >= role.max_placements:
                            continue
                        for dm_id, eligible in registry.query(role.capability, env):
                            for tid in eligible:
                                if tid in slot.targets or load[tid] >= budget.max_components_per_target:
                                    continue
                                gain = 1 if (tid in injectable and tid not in covered) else 0
                                key = (d.id, tid, dm_id, 1, slot.ref)
                                act = PlanAction(d.id, Role.LURE, dm_id, tid, slot.ref, ri)
                                if _better(gain, key, best):
                                    best = (gain, key, [act], slot)
            if best is None or best[0] <= 0:
                break
            _, _, acts, slot = best
            if slot is None:
                new_count += 1
                ref = f"+{new_count}"
                acts = [PlanAction(a.definition_id, a.role, a.dm_id, a.target_id, ref, a.role_index) for a in acts]
                d = pool.get(acts[0].definition_id)
                slot = _InstanceSlot(ref, d, set(), [0] * len(d.lure_roles))
                slots.append(slot)
                per_def[d.id] += 1
            for a in acts:
                slot.targets.add(a.target_id)
                if a.role is Role.LURE:
                    slot.lure_counts[a.role_index] += 1
                load[a.target_id] += 1
                if a.target_id in injectable:
                    covered.add(a.target_id)
            actions.extend(acts)
        return DeploymentPlan(tuple(actions), budget, tuple(retire))


def _better(gain: int, key: tuple, best: tuple | None) -> bool:
    if best is None:
        return True
    return gain > best[0] or (gain == best[0] and key < best[1])


def _role_index(d: TripwireDefinition, capability: Any) -> int:
    for i, r in enumerate(d.lure_roles):
        if r.capability is capability:
            return i
    return 0


def _pick_lures(
    env: Environment,
    registry: DeployModuleRegistry,
    budget: Budget,
    load: Counter,
    covered: set[str],
    role: Any,
    need: int,
    exclude: set[str],
) -> list[tuple[str, str]] | None:
    """Choose ``need`` distinct lure targets: uncovered first, then by (target, dm)."""
    options = []
    for dm_id, eligible in registry.query(role.capability, env):
        for tid in eligible:
            if tid in exclude or load[tid] >= budget.max_components_per_target:
                continue
            options.append((tid in covered, tid, dm_id))
    options.sort()
    picks: list[tuple[str, str]] = []
    taken: set[str] = set()
    for _, tid, dm_id in options:
        if tid in taken:
            continue
        picks.append((dm_id, tid))
        taken.add(tid)
        if len(picks) == need:
            return picks
    return None if need > 0 else []


def plan(
    env: Environment,
    pool: TripwirePool,
    registry: DeployModuleRegistry,
    budget: Budget | None = None,
    instances: Iterable[TripwireInstance] = (),
) -> DeploymentPlan:
    return GreedyCoverage().plan(env, pool, registry, budget or Budget(), instances)


class DeploymentController:
    """Single-writer owner of the environment snapshot, instances, and attack graph."""

    def __init__(
        self,
        env: Environment,
        pool: TripwirePool,
        registry: DeployModuleRegistry,
        graph: AttackGraph | None = None,
        budget: Budget | None = None,
        seed: int = 0,
        strategy: PlacementStrategy | None = None,
    ):
        self.env = env
        self.pool = pool
        self.registry = registry
        if registry.pool is None:
            registry.pool = pool
        self.graph = graph if graph is not None else AttackGraph()
        self.budget = budget or Budget()
        self.secrets = SecretStream(seed)
        self.strategy = strategy or GreedyCoverage()
        self.instances: dict[str, TripwireInstance] = {}
        self.now = 0
        self.graph.sync_targets(self.env.target_ids())

    # views

    def active_instances(self) -> list[TripwireInstance]:
        return [self.instances[k] for k in sorted(self.instances) if not self.instances[k].retired]

    def instance_of(self, placement_id: str) -> str | None:
        try:
            return self.registry.placement(placement_id).tripwire_instance_id
        except TripwireError:
            return None

    def instance_by_secret(self, secret: str) -> TripwireInstance | None:
        for inst in self.instances.values():
            if secret and inst.secret == secret:
                return inst
        return None

    def coverage(self) -> CoverageReport:
        return coverage(self.env, self.registry.placements(active_only=True))

    # planning and execution

    def plan(self) -> DeploymentPlan:
        return self.strategy.plan(self.env, self.pool, self.registry, self.budget, self.active_instances())

    def execute(self, plan: DeploymentPlan) -> list[Placement]:
        deployed: list[Placement] = []
        for ref in plan.retire:
            self._retire_instance(ref)
        groups: dict[str, list[PlanAction]] = {}
        for a in plan.actions:
            groups.setdefault(a.instance, []).append(a)
        for ref, acts in groups.items():
            if ref.startswith("+"):
                deployed.extend(self._deploy_new(acts))
            else:
                deployed.extend(self._extend(ref, acts))
        self._sync_decoy_hosts()
        return deployed

    def _deploy_new(self, acts: list[PlanAction]) -> list[Placement]:
        inst = self.pool.instantiate(acts[0].definition_id, self.secrets, created_at=self.now)
        placed: list[Placement] = []
        try:
            # decoy first, lures after
            for a in sorted(acts, key=lambda a: a.role is not Role.DECOY):
                placed.append(self.registry.deploy(a.dm_id, inst, a.role, a.target_id, None, self.env, timestamp=self.now))
        except TripwireError as exc:
            log.warning("rolling back %s: %s", inst.instance_id, exc)
            for p in placed:
                self.registry.retract(p.id)
            return []
        for p in placed:
            if p.role is Role.DECOY:
                inst.decoy_placement = p.id
            else:
                inst.lure_placements.append(p.id)
        self.instances[inst.instance_id] = inst
        self.graph.add_instance_subgraph(inst, placed)
        return placed

    def _extend(self, instance_id: str, acts: list[PlanAction]) -> list[Placement]:
        inst = self.instances[instance_id]
        placed: list[Placement] = []
        for a in acts:
            try:
                p = self.registry.deploy(a.dm_id, inst, a.role, a.target_id, None, self.env, timestamp=self.now)
            except TripwireError as exc:
                log.warning("could not extend %s: %s", instance_id, exc)
                continue
            inst.lure_placements.append(p.id)
            placed.append(p)
        if placed:
            all_ps = [self.registry.placement(pid) for pid in [inst.decoy_placement, *inst.lure_placements] if pid]
            self.graph.add_instance_subgraph(inst, all_ps)
        return placed

    def _retire_instance(self, instance_id: str) -> list[str]:
        inst = self.instances[instance_id]
        retracted = []
        for pid in [inst.decoy_placement, *inst.lure_placements]:
            if pid is None:
                continue
            if self.registry.placement(pid).active:
                self.registry.retract(pid)
                retracted.append(pid)
            if self.graph.has_component(pid):
                self.graph.retire_component(pid)
        inst.retired = True
        return retracted

    def _sync_decoy_hosts(self) -> None:
        env = self.env
        live = {t.id for t in self.registry.decoy_hosts.values()}
        targets = {
            k: v for k, v in env.targets.items() if v.kind is not TargetKind.DECOY_HOST or k in live
        }
        for t in self.registry.decoy_hosts.values():
            if t.parent_host in targets:
                targets[t.id] = t
        self.env = Environment(hosts=env.hosts, targets=targets, reachability=env.reachability)
        self.graph.sync_targets(self.env.target_ids())

    def deploy_all(self) -> list[Placement]:
        return self.execute(self.plan())

    def reconcile(self) -> ReconcileOutcome:
        """One reconcile cycle: re-plan on the current state and execute."""
        p = self.plan()
        outcome = ReconcileOutcome(actions=len(p.actions) + len(p.retire))
        for ref in p.retire:
            outcome.retired_instances.append(ref)
        outcome.deployed = self.execute(p)
        return outcome

    def handle_event(self, event: EnvironmentEvent) -> ReconcileOutcome:
        self.now = max(self.now, event.timestamp)
        new_env, invalidated = apply_event(self.env, event, self.registry.placements(active_only=True))
        self.env = new_env
        outcome = ReconcileOutcome(invalidated=list(invalidated))
        dead_instances: set[str] = set()
        for pid in invalidated:
            p = self.registry.retract(pid)
            self.graph.retire_component(pid)
            outcome.retracted.append(pid)
            if p.role is Role.DECOY:
                dead_instances.add(p.tripwire_instance_id)
        for iid in sorted(dead_instances):
            outcome.retracted.extend(self._retire_instance(iid))
            outcome.retired_instances.append(iid)
        self._sync_decoy_hosts()
        cycle = self.reconcile()
        outcome.retired_instances.extend(cycle.retired_instances)
        outcome.deployed = cycle.deployed
        outcome.actions = len(outcome.retracted) + cycle.actions
        return outcome
