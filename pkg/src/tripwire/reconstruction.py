"""Backward and forward tracking over condensed alarms and the attack graph.

An earlier alarm ``c`` is a candidate predecessor of alarm ``a`` when it
happened strictly before ``a`` (within the lookback window) and either

* ``a`` hit a decoy while presenting that decoy's linking secret, and ``c``
  sits on, or was raised from, a target holding one of the decoy's lures
  (the hop goes *via* that lure), or
* otherwise, ``c`` sits on, or was raised from, the target that accessed
  ``a`` (a ``same-target`` hop). Accesses from ``external`` end the chain.

Backward tracking expands predecessors depth-first; each expansion with
``k`` candidates contributes a hop confidence of ``1/k`` and a path scores
the product of its hop confidences.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from typing import Any, Iterable

from .adversary import AlarmTruth
from .alarms import AlarmStore, CondensedAlarm
from .environment import EXTERNAL
from .errors import NotFoundError, ValidationError
from .graph import AttackGraph, NodeKind, secret_digest

SAME_TARGET = "same-target"


@dataclass(frozen=True)
class ReconstructionConfig:
    # None = unbounded lookback (the whole run)
    window: int | None = None
    max_depth: int = 16
    max_candidates_per_hop: int = 8
    # ranked paths kept per expansion; exact for the top-N since siblings share 1/k
    max_paths: int = 32

    def __post_init__(self) -> None:
        for name in ("max_depth", "max_candidates_per_hop", "max_paths"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive")
        if self.window is not None and self.window <= 0:
            raise ValidationError("window must be positive")

    def to_dict(self) -> dict[str, Any]:
        return {
            "window": self.window,
            "max_depth": self.max_depth,
            "max_candidates_per_hop": self.max_candidates_per_hop,
            "max_paths": self.max_paths,
        }


@dataclass(frozen=True)
class HopEdge:
    src: str
    dst: str
    via: str

    def to_dict(self) -> dict[str, str]:
        return {"from": self.src, "to": self.dst, "via": self.via}


@dataclass(frozen=True)
class AttackPath:
    hops: tuple[str, ...]
    hop_edges: tuple[HopEdge, ...]
    exact_score: Fraction = Fraction(1)
    start: int = 0
    anchor: str = ""

    @property
    def score(self) -> float:
        return float(self.exact_score)

    def rank_key(self) -> tuple:
        return (-self.exact_score, -len(self.hops), self.start, self.hops)

    def to_dict(self) -> dict[str, Any]:
        return {
            "hops": list(self.hops),
            "hop_edges": [e.to_dict() for e in self.hop_edges],
            "score": self.score,
            "anchor": self.anchor,
        }


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float
    top1_exact: bool

    def to_dict(self) -> dict[str, Any]:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1, "top1_exact": self.top1_exact}


class Tracker:
    """Read-only tracking view over one store/graph snapshot."""

    def __init__(self, store: AlarmStore, graph: AttackGraph, config: ReconstructionConfig | None = None):
        self.config = config or ReconstructionConfig()
        self.graph = graph
        self.alarms: list[CondensedAlarm] = store.all()
        self._by_id = {a.alarm_id: a for a in self.alarms}
        self._order = {a.alarm_id: i for i, a in enumerate(self.alarms)}
        self._expand = lru_cache(maxsize=None)(self._expand_uncached)

    def get(self, alarm_id: str) -> CondensedAlarm:
        try:
            return self._by_id[alarm_id]
        except KeyError:
            raise NotFoundError(f"unknown alarm {alarm_id!r}") from None

    # linking

    def _target_of(self, alarm: CondensedAlarm) -> str | None:
        if self.graph.has_component(alarm.placement_id):
            return self.graph.component(alarm.placement_id).target_id
        return None

    def anchors(self, alarm: CondensedAlarm) -> dict[str, str]:
        """Targets a predecessor must touch or come from, mapped to the hop label."""
        if self.graph.has_component(alarm.placement_id):
            node = self.graph.component(alarm.placement_id)
            if node.kind is NodeKind.DECOY and alarm.secret and node.secret_digest == secret_digest(alarm.secret):
                lures = self.graph.unlocks_sources(alarm.placement_id)
                if lures:
                    out: dict[str, str] = {}
                    for lure in lures:
                        out.setdefault(lure.target_id, lure.ref)
                    return out
        if alarm.accessor == EXTERNAL:
            return {}
        return {alarm.accessor: SAME_TARGET}

    def _in_window(self, earlier: CondensedAlarm, later: CondensedAlarm) -> bool:
        if earlier.first_ts >= later.first_ts:
            return False
        w = self.config.window
        return w is None or later.first_ts - earlier.first_ts <= w

    def link(self, c: CondensedAlarm, a: CondensedAlarm) -> str | None:
        """Hop label if ``c`` is a candidate predecessor of ``a``, else None."""
        if c.alarm_id == a.alarm_id or not self._in_window(c, a):
            return None
        anchors = self.anchors(a)
        if not anchors:
            return None
        t = self._target_of(c)
        if t is not None and t in anchors:
            return anchors[t]
        if c.accessor in anchors:
            return anchors[c.accessor]
        return None

    def candidates(self, a: CondensedAlarm) -> list[tuple[CondensedAlarm, str]]:
        found = []
        for c in self.alarms:
            if c.first_ts >= a.first_ts:
                break
            via = self.link(c, a)
            if via is not None:
                found.append((c, via))
        # keep the most recent ones
        found.sort(key=lambda cv: (-cv[0].first_ts, -self._order[cv[0].alarm_id]))
        return found[: self.config.max_candidates_per_hop]

    # backward

    def _expand_uncached(self, alarm_id: str, depth: int) -> tuple[AttackPath, ...]:
        a = self._by_id[alarm_id]
        cands = self.candidates(a) if depth > 1 else []
        if not cands:
            return (AttackPath((alarm_id,), (), Fraction(1), a.first_ts),)
        conf = Fraction(1, len(cands))
        paths = []
        for c, via in cands:
            for sub in self._expand(c.alarm_id, depth - 1):
                paths.append(
                    AttackPath(
                        sub.hops + (alarm_id,),
                        sub.hop_edges + (HopEdge(c.alarm_id, alarm_id, via),),
                        sub.exact_score * conf,
                        sub.start,
                    )
                )
        paths.sort(key=AttackPath.rank_key)
        return tuple(paths[: self.config.max_paths])

    def backward(self, alarm_id: str) -> list[AttackPath]:
        self.get(alarm_id)
        return [
            AttackPath(p.hops, p.hop_edges, p.exact_score, p.start, alarm_id)
            for p in self._expand(alarm_id, self.config.max_depth)
        ]

    # forward

    def successors(self, a: CondensedAlarm) -> list[tuple[CondensedAlarm, str]]:
        out = []
        for b in self.alarms:
            if b.first_ts <= a.first_ts:
                continue
            via = self.link(a, b)
            if via is not None:
                out.append((b, via))
        return out

    def forward(self, alarm_id: str) -> list[tuple[str, str]]:
        start = self.get(alarm_id)
        seen = {alarm_id}
        frontier = [start]
        out: list[tuple[str, str]] = []
        for _ in range(self.config.max_depth - 1):
            nxt = []
            for a in frontier:
                for b, via in self.successors(a):
                    if b.alarm_id in seen:
                        continue
                    seen.add(b.alarm_id)
                    out.append((b.alarm_id, via))
                    nxt.append(b)
            if not nxt:
                break
            frontier = sorted(nxt, key=lambda x: self._order[x.alarm_id])
        return out

    def maximal_alarms(self) -> list[CondensedAlarm]:
        return [a for a in self.alarms if not self.successors(a)]


def backward_track(
    alarm_id: str, store: AlarmStore, graph: AttackGraph, config: ReconstructionConfig | None = None
) -> list[AttackPath]:
    return Tracker(store, graph, config).backward(alarm_id)


def forward_track(
    alarm_id: str, store: AlarmStore, graph: AttackGraph, config: ReconstructionConfig | None = None
) -> list[tuple[str, str]]:
    return Tracker(store, graph, config).forward(alarm_id)


def reconstruct_all(
    store: AlarmStore, graph: AttackGraph, config: ReconstructionConfig | None = None
) -> list[AttackPath]:
    tracker = Tracker(store, graph, config)
    paths: list[AttackPath] = []
    for a in tracker.maximal_alarms():
        paths.extend(tracker.backward(a.alarm_id))
    unique: dict[tuple[str, ...], AttackPath] = {}
    for p in sorted(paths, key=AttackPath.rank_key):
        unique.setdefault(p.hops, p)
    kept = [
        p
        for p in unique.values()
        if not any(len(q.hops) > len(p.hops) and q.hops[: len(p.hops)] == p.hops for q in unique.values())
    ]
    return sorted(kept, key=AttackPath.rank_key)


def top_per_anchor(campaigns: Iterable[AttackPath]) -> list[AttackPath]:
    best: dict[str, AttackPath] = {}
    for p in sorted(campaigns, key=AttackPath.rank_key):
        best.setdefault(p.anchor, p)
    return sorted(best.values(), key=AttackPath.rank_key)


def evaluate(campaigns: list[AttackPath], truth: AlarmTruth) -> Metrics:
    reconstructed: set[tuple[str, str]] = set()
    for p in top_per_anchor(campaigns):
        reconstructed |= {(e.src, e.dst) for e in p.hop_edges}
    true_edges = set(truth.edges)
    hit = len(reconstructed & true_edges)
    if not reconstructed and not true_edges:
        precision = recall = 1.0
    else:
        precision = hit / len(reconstructed) if reconstructed else 0.0
        recall = hit / len(true_edges) if true_edges else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    ranked = sorted(campaigns, key=AttackPath.rank_key)
    if ranked:
        top1 = ranked[0].hops == tuple(truth.chain)
    else:
        top1 = not truth.chain
    return Metrics(precision, recall, f1, top1)


def check_soundness(paths: Iterable[AttackPath], store: AlarmStore, graph: AttackGraph) -> list[str]:
    """Violations of the hop-edge soundness invariant (empty list = sound)."""
    problems = []
    for p in paths:
        for e in p.hop_edges:
            src, dst = store.get(e.src), store.get(e.dst)
            if not src.first_ts < dst.first_ts:
                problems.append(f"{e.src}->{e.dst}: timestamps not increasing")
            if e.via != SAME_TARGET and not graph.has_unlocks(e.via, dst.placement_id):
                problems.append(f"{e.src}->{e.dst}: via {e.via} has no UNLOCKS edge to {dst.placement_id}")
    return problems
