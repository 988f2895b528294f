"""Scripted, seeded multi-step attacker and its ground-truth trace.

The attacker has a *position* (the target it currently controls, or
``external``) and a set of harvested secrets:

* ``probe(t)`` touches the credential-free decoys on ``t`` (hidden
  endpoints) from the current position, then the attacker sits on ``t``.
* ``compromise(t)`` moves onto ``t`` without touching anything deceptive.
* ``harvest(t)`` reads every lure on ``t`` and keeps their secrets.
* ``use-secret(ref)`` presents the secret of instance ``ref`` to its decoy.
  Cloud APIs see the calling host, so the accessor is the position's host.
* ``pivot(from, to)`` moves along a reachability edge.
* ``noise(k)`` touches ``k`` ordinary surfaces; nothing deceptive.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable, Mapping, Sequence

from .alarms import RawAlarm
from .deploy import AccessEvent, Placement
from .environment import EXTERNAL, Environment, TargetKind
from .errors import ValidationError
from .pool import Role, TripwireInstance

STEP_SPACING_MS = 100


class StepKind(str, Enum):
    PROBE = "probe"
    COMPROMISE = "compromise"
    HARVEST = "harvest"
    USE_SECRET = "use-secret"
    PIVOT = "pivot"
    NOISE = "noise"


@dataclass(frozen=True)
class ScenarioStep:
    kind: StepKind
    params: Mapping[str, Any] = field(default_factory=dict)
    at: int = 0

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> ScenarioStep:
        try:
            kind = StepKind(data["kind"])
        except (KeyError, ValueError):
            raise ValidationError(f"bad scenario step {dict(data)!r}") from None
        at = data.get("at", 0)
        if isinstance(at, bool) or not isinstance(at, int) or at < 0:
            raise ValidationError(f"step 'at' must be a non-negative integer, got {at!r}")
        params = dict(data.get("params") or {})
        required = {
            StepKind.PROBE: ("target",),
            StepKind.COMPROMISE: ("target",),
            StepKind.HARVEST: ("target",),
            StepKind.USE_SECRET: ("secret_ref",),
            StepKind.PIVOT: ("from", "to"),
            StepKind.NOISE: ("count",),
        }[kind]
        missing = [k for k in required if k not in params]
        if missing:
            raise ValidationError(f"{kind.value} step is missing params {missing}")
        return cls(kind, params, at)

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "params": dict(sorted(self.params.items())), "at": self.at}


def parse_scenario(document: Any) -> list[ScenarioStep]:
    if document is None:
        return []
    if isinstance(document, Mapping):
        document = document.get("steps") or []
    if not isinstance(document, list):
        raise ValidationError("scenario must be a list of steps")
    return [s if isinstance(s, ScenarioStep) else ScenarioStep.from_dict(s) for s in document]


@dataclass
class TraceStep:
    step: ScenarioStep
    touched: list[str]
    # indices into the emitted AccessEvent list
    events: list[int]
    accessor: str


@dataclass
class GroundTruthTrace:
    steps: list[TraceStep] = field(default_factory=list)
    # (cause step index, effect step index); only alarm-producing steps
    causal_edges: set[tuple[int, int]] = field(default_factory=set)
    forged: list[RawAlarm] = field(default_factory=list)

    def chain(self) -> list[int]:
        """Longest causal path over step indices (earliest start on ties)."""
        succ: dict[int, list[int]] = {}
        nodes: set[int] = set()
        for a, b in self.causal_edges:
            succ.setdefault(a, []).append(b)
            nodes |= {a, b}
        nodes |= {i for i, s in enumerate(self.steps) if s.events}
        best: dict[int, list[int]] = {}
        for n in sorted(nodes, reverse=True):
            tails = [best[m] for m in sorted(succ.get(n, []))]
            longest = max(tails, key=len, default=[])
            best[n] = [n] + longest
        return max((best[n] for n in sorted(nodes)), key=len, default=[])

    def to_dict(self) -> dict[str, Any]:
        return {
            "steps": [
                {"step": s.step.to_dict(), "touched": s.touched, "accessor": s.accessor} for s in self.steps
            ],
            "causal_edges": sorted([list(e) for e in self.causal_edges]),
            "forged": [f.to_dict() for f in self.forged],
        }


@dataclass(frozen=True)
class AlarmTruth:
    """Ground truth expressed over condensed alarm ids."""

    chain: tuple[str, ...]
    edges: frozenset[tuple[str, str]]


def truth_in_alarms(trace: GroundTruthTrace, alarm_of_event: Sequence[str | None]) -> AlarmTruth:
    def ids(step_idx: int) -> list[str]:
        out = []
        for e in trace.steps[step_idx].events:
            aid = alarm_of_event[e]
            if aid is not None and aid not in out:
                out.append(aid)
        return out

    edges = set()
    for a, b in trace.causal_edges:
        for x in ids(a):
            for y in ids(b):
                if x != y:
                    edges.add((x, y))
    chain: list[str] = []
    for idx in trace.chain():
        for aid in ids(idx):
            if aid not in chain:
                chain.append(aid)
    return AlarmTruth(tuple(chain), frozenset(edges))


class _World:
    def __init__(self, env: Environment, placements: Iterable[Placement], instances: Iterable[TripwireInstance]):
        self.env = env
        everything = sorted(placements, key=lambda p: p.id)
        self.placements = [p for p in everything if p.active]
        self.retired_decoy_of = {
            p.tripwire_instance_id: p for p in everything if not p.active and p.role is Role.DECOY
        }
        self.instances = {i.instance_id: i for i in instances}
        self.lures_on: dict[str, list[Placement]] = {}
        self.open_decoys_on: dict[str, list[Placement]] = {}
        self.decoy_of: dict[str, Placement] = {}
        has_lure = {p.tripwire_instance_id for p in self.placements if p.role is Role.LURE}
        for p in self.placements:
            if p.role is Role.LURE:
                self.lures_on.setdefault(p.target_id, []).append(p)
            else:
                self.decoy_of[p.tripwire_instance_id] = p
                if p.tripwire_instance_id not in has_lure:
                    self.open_decoys_on.setdefault(p.target_id, []).append(p)

    def secret(self, instance_id: str) -> str:
        inst = self.instances.get(instance_id)
        return inst.secret if inst is not None else ""


def _require_target(env: Environment, tid: Any, step: ScenarioStep) -> str:
    if tid not in env:
        raise ValidationError(f"{step.kind.value}@{step.at}: unknown target {tid!r}")
    return tid


class Adversary:
    """Stateful attacker; ``refresh`` swaps in a new world view between steps."""

    def __init__(
        self,
        env: Environment,
        placements: Iterable[Placement],
        seed: int = 0,
        *,
        instances: Iterable[TripwireInstance] = (),
    ):
        self.world = _World(env, placements, instances)
        self.rng = random.Random(seed)
        self.events: list[AccessEvent] = []
        self.trace = GroundTruthTrace()
        self.position = EXTERNAL
        self._origin: int | None = None
        self._harvested: dict[str, int] = {}
        self._secrets: dict[str, str] = {}
        self._last_at = -1

    def refresh(self, env: Environment, placements: Iterable[Placement], instances: Iterable[TripwireInstance]) -> None:
        self.world = _World(env, placements, instances)

    def play(self, step: ScenarioStep) -> list[AccessEvent]:
        """Execute one step; returns the access events it produced."""
        world, env = self.world, self.world.env
        idx = len(self.trace.steps)
        if step.at < self._last_at:
            raise ValidationError(f"step {idx} goes back in time ({step.at} < {self._last_at})")
        self._last_at = step.at
        touched: list[str] = []
        emitted: list[AccessEvent] = []
        accessor = self.position
        cause: int | None = None

        if step.kind is StepKind.PROBE:
            t = step.params["target"]
            for p in world.open_decoys_on.get(t, []):
                emitted.append(AccessEvent(p.id, accessor, {}, step.at))
                touched.append(p.id)
            cause = self._origin
            if t != self.position:
                self.position, self._origin = t, (idx if emitted else None)
            elif emitted:
                self._origin = idx
        elif step.kind is StepKind.COMPROMISE:
            t = step.params["target"]
            if t != self.position:
                self.position, self._origin = t, None
        elif step.kind is StepKind.PIVOT:
            self.position, self._origin = step.params["to"], None
        elif step.kind is StepKind.HARVEST:
            t = step.params["target"]
            for p in world.lures_on.get(t, []):
                emitted.append(AccessEvent(p.id, accessor, {}, step.at))
                touched.append(p.id)
                self._harvested.setdefault(p.tripwire_instance_id, idx)
                self._secrets.setdefault(p.tripwire_instance_id, world.secret(p.tripwire_instance_id))
            cause = self._origin
        elif step.kind is StepKind.USE_SECRET:
            ref = step.params["secret_ref"]
            accessor = env.location(self.position) if self.position != EXTERNAL else EXTERNAL
            # the attacker presents what it stole, even if that decoy has since been retired
            secret = self._secrets.get(ref, world.secret(ref))
            decoy = world.decoy_of.get(ref) or world.retired_decoy_of.get(ref)
            if decoy is not None:
                emitted.append(AccessEvent(decoy.id, accessor, {"secret": secret}, step.at))
                touched.append(decoy.id)
            cause = self._harvested.get(ref)
        else:
            surfaces = sorted(t for t in env.targets if env.targets[t].kind is not TargetKind.DECOY_HOST)
            for _ in range(int(step.params["count"])):
                if surfaces:
                    touched.append(f"surface:{self.rng.choice(surfaces)}")

        first = len(self.events)
        self.events.extend(emitted)
        ev_idx = list(range(first, len(self.events)))
        if ev_idx and cause is not None and self.trace.steps[cause].events:
            self.trace.causal_edges.add((cause, idx))
        self.trace.steps.append(TraceStep(step, touched, ev_idx, accessor))
        return emitted


def run_scenario(
    env: Environment,
    placements: Iterable[Placement],
    scenario: Iterable[ScenarioStep | Mapping[str, Any]],
    seed: int = 0,
    *,
    instances: Iterable[TripwireInstance] = (),
) -> tuple[list[AccessEvent], GroundTruthTrace]:
    """Play a scenario; validation runs over the whole scenario before any event is emitted."""
    steps = parse_scenario(list(scenario))
    placements = list(placements)
    instances = list(instances)
    adversary = Adversary(env, placements, seed, instances=instances)
    validate_scenario(env, adversary.world, steps)
    for step in steps:
        adversary.play(step)
    return adversary.events, adversary.trace


def validate_scenario(env: Environment, world: _World, steps: list[ScenarioStep]) -> None:
    harvested: set[str] = set()
    for step in steps:
        k = step.kind
        if k in (StepKind.PROBE, StepKind.COMPROMISE, StepKind.HARVEST):
            t = _require_target(env, step.params["target"], step)
            if k is StepKind.HARVEST:
                harvested |= {p.tripwire_instance_id for p in world.lures_on.get(t, [])}
        elif k is StepKind.PIVOT:
            src = _require_target(env, step.params["from"], step)
            dst = _require_target(env, step.params["to"], step)
            if not env.reachable(src, dst):
                raise ValidationError(f"pivot@{step.at}: {dst} is not reachable from {src}")
        elif k is StepKind.USE_SECRET:
            ref = step.params["secret_ref"]
            if ref not in harvested:
                raise ValidationError(f"use-secret@{step.at}: secret of {ref!r} was not harvested before use")
        elif int(step.params["count"]) < 0:
            raise ValidationError("noise count must be >= 0")


def generate_random_scenario(
    env: Environment,
    placements: Iterable[Placement],
    length: int,
    seed: int,
    *,
    instances: Iterable[TripwireInstance] = (),
) -> list[ScenarioStep]:
    """Sample one attack chain padded with noise to exactly ``length`` steps.

    The chain is: enter a host (probe an open decoy or compromise silently),
    harvest a single-lure target there, optionally pivot, use the secret.
    """
    if length < 1:
        raise ValidationError("scenario length must be >= 1")
    rng = random.Random(seed)
    world = _World(env, placements, instances)
    probe_targets = sorted(t for t, ds in world.open_decoys_on.items() if len(ds) == 1)
    harvestable = sorted(
        t
        for t, ls in world.lures_on.items()
        if len(ls) == 1 and ls[0].tripwire_instance_id in world.decoy_of and world.secret(ls[0].tripwire_instance_id)
    )

    core: list[tuple[StepKind, dict[str, Any]]] = []
    if length >= 3 and harvestable:
        f = rng.choice(harvestable)
        host = env.location(f)
        local = sorted(
            t
            for t, tgt in env.targets.items()
            if tgt.location == host and tgt.kind in (TargetKind.PROCESS, TargetKind.HOST_FILESYSTEM)
        )
        entries = [t for t in local if t in probe_targets]
        if entries and rng.random() < 0.75:
            position = rng.choice(entries)
            core.append((StepKind.PROBE, {"target": position}))
        else:
            processes = [t for t in local if env.targets[t].kind is TargetKind.PROCESS]
            position = rng.choice(processes or [f])
            core.append((StepKind.COMPROMISE, {"target": position}))
        core.append((StepKind.HARVEST, {"target": f}))
        hops = sorted(dst for src, dst in env.reachability if src == position)
        if length >= 4 and hops and rng.random() < 0.3:
            core.append((StepKind.PIVOT, {"from": position, "to": rng.choice(hops)}))
        core.append((StepKind.USE_SECRET, {"secret_ref": world.lures_on[f][0].tripwire_instance_id}))
    elif probe_targets and (length == 1 or rng.random() < 0.8):
        core.append((StepKind.PROBE, {"target": rng.choice(probe_targets)}))

    noise_slots = length - len(core)
    # insertion points: before core[i] for i in 0..len(core)
    cuts = sorted(rng.randint(0, len(core)) for _ in range(noise_slots))
    out: list[tuple[StepKind, dict[str, Any]]] = []
    c = 0
    for i, item in enumerate(core + [None]):
        while c < len(cuts) and cuts[c] == i:
            out.append((StepKind.NOISE, {"count": rng.randint(1, 3)}))
            c += 1
        if item is not None:
            out.append(item)
    return [ScenarioStep(k, p, STEP_SPACING_MS * (i + 1)) for i, (k, p) in enumerate(out)]


def forge_alarms(
    env: Environment,
    placements: Iterable[Placement],
    count: int,
    seed: int,
    t_max: int,
) -> list[RawAlarm]:
    """Spurious alarms on real placements with accessors drawn from real targets."""
    rng = random.Random(f"forge:{seed}")
    ps = sorted((p for p in placements if p.active), key=lambda p: p.id)
    accessors = sorted(t for t, tgt in env.targets.items() if tgt.kind is not TargetKind.DECOY_HOST)
    if not ps or not accessors or count <= 0:
        return []
    out = []
    for _ in range(count):
        p = rng.choice(ps)
        out.append(RawAlarm(p.id, p.dm_id, rng.choice(accessors), {}, rng.randint(0, max(t_max, 0))))
    return out
