"""Attack graph of deceptive components.

Nodes are targets and deployed components; edges say where a component
sits (PLACED_ON), which lure unlocks which decoy (UNLOCKS) and which
instance a component belongs to (PART_OF, lure -> its instance's decoy).
Nodes are retired, never deleted, so old alarms stay explainable.
"""

from __future__ import annotations

import hashlib
import json
import threading
from dataclasses import dataclass, replace
from enum import Enum
from typing import Any, Iterable

import networkx as nx

from .errors import NotFoundError, ValidationError
from .pool import Role, TripwireInstance


class NodeKind(str, Enum):
    TARGET = "target"
    LURE = "lure-component"
    DECOY = "decoy-component"


class EdgeKind(str, Enum):
    PLACED_ON = "PLACED_ON"
    UNLOCKS = "UNLOCKS"
    PART_OF = "PART_OF"


@dataclass(frozen=True)
class AgNode:
    id: str
    kind: NodeKind
    ref: str
    retired: bool = False
    instance_id: str | None = None
    target_id: str | None = None
    # digest of the instance's linking secret, on decoy components only
    secret_digest: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "kind": self.kind.value, "ref": self.ref, "retired": self.retired}
        if self.instance_id is not None:
            out["instance_id"] = self.instance_id
            out["target_id"] = self.target_id
        if self.secret_digest is not None:
            out["secret_digest"] = self.secret_digest
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AgNode:
        return cls(
            id=data["id"],
            kind=NodeKind(data["kind"]),
            ref=data["ref"],
            retired=bool(data.get("retired", False)),
            instance_id=data.get("instance_id"),
            target_id=data.get("target_id"),
            secret_digest=data.get("secret_digest"),
        )


@dataclass(frozen=True)
class AgEdge:
    kind: EdgeKind
    src: str
    dst: str
    instance_id: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind.value, "from": self.src, "to": self.dst, "instance_id": self.instance_id}


def secret_digest(secret: str) -> str:
    return hashlib.sha256(secret.encode()).hexdigest()[:16]


def target_node_id(target_id: str) -> str:
    return f"target:{target_id}"


def component_node_id(placement_id: str) -> str:
    return f"component:{placement_id}"


_EDGE_ENDPOINTS = {
    EdgeKind.PLACED_ON: ({NodeKind.LURE, NodeKind.DECOY}, {NodeKind.TARGET}),
    EdgeKind.UNLOCKS: ({NodeKind.LURE}, {NodeKind.DECOY}),
    EdgeKind.PART_OF: ({NodeKind.LURE}, {NodeKind.DECOY}),
}


class AttackGraph:
    def __init__(self) -> None:
        self._g = nx.MultiDiGraph()
        self._lock = threading.RLock()
        self._instances: dict[str, tuple[str | None, tuple[str, ...]]] = {}

    # basic access

    def __len__(self) -> int:
        return self._g.number_of_nodes()

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._g

    @property
    def raw(self) -> nx.MultiDiGraph:
        return self._g

    def node(self, node_id: str) -> AgNode:
        try:
            return self._g.nodes[node_id]["data"]
        except KeyError:
            raise NotFoundError(f"unknown graph node {node_id!r}") from None

    def nodes(self) -> list[AgNode]:
        return [self._g.nodes[n]["data"] for n in sorted(self._g.nodes)]

    def edges(self, kind: EdgeKind | None = None) -> list[AgEdge]:
        out = [
            AgEdge(EdgeKind(k), u, v, d.get("instance_id"))
            for u, v, k, d in self._g.edges(keys=True, data=True)
            if kind is None or k == kind.value
        ]
        return sorted(out, key=lambda e: (e.kind.value, e.src, e.dst))

    def component(self, placement_id: str) -> AgNode:
        return self.node(component_node_id(placement_id))

    def has_component(self, placement_id: str) -> bool:
        return component_node_id(placement_id) in self._g

    # mutation

    def _add_node(self, node: AgNode) -> None:
        self._g.add_node(node.id, data=node)

    def _add_edge(self, kind: EdgeKind, src: str, dst: str, instance_id: str | None = None) -> None:
        srcs, dsts = _EDGE_ENDPOINTS[kind]
        if src not in self._g or dst not in self._g:
            raise ValidationError(f"{kind.value} edge {src} -> {dst} has a missing endpoint")
        a, b = self.node(src), self.node(dst)
        if a.kind not in srcs or b.kind not in dsts:
            raise ValidationError(f"{kind.value} edge cannot join {a.kind.value} -> {b.kind.value}")
        if kind is not EdgeKind.PLACED_ON and a.instance_id != b.instance_id:
            raise ValidationError(f"{kind.value} edge crosses instances {a.instance_id} / {b.instance_id}")
        if not self._g.has_edge(src, dst, key=kind.value):
            self._g.add_edge(src, dst, key=kind.value, instance_id=instance_id)

    def ensure_target(self, target_id: str) -> str:
        nid = target_node_id(target_id)
        if nid not in self._g:
            self._add_node(AgNode(nid, NodeKind.TARGET, target_id))
        return nid

    def add_instance_subgraph(self, instance: TripwireInstance, placements: Iterable[Any]) -> list[str]:
        """Add one instance's components and edges; re-adding the same shape is a no-op."""
        placements = list(placements)
        for p in placements:
            if p.tripwire_instance_id != instance.instance_id:
                raise ValidationError(f"placement {p.id} belongs to {p.tripwire_instance_id}, not {instance.instance_id}")
        decoys = [p for p in placements if Role(p.role) is Role.DECOY]
        if len(decoys) > 1:
            raise ValidationError(f"{instance.instance_id} has {len(decoys)} decoy placements")
        decoy_id = decoys[0].id if decoys else None
        lure_ids = tuple(sorted(p.id for p in placements if Role(p.role) is Role.LURE))

        with self._lock:
            known = self._instances.get(instance.instance_id)
            if known == (decoy_id, lure_ids):
                return self._instance_nodes(instance.instance_id)
            # a subgraph may only grow by extra lures; the decoy is fixed
            if known is not None and (known[0] != decoy_id or not set(known[1]) <= set(lure_ids)):
                raise ValidationError(f"conflicting subgraph for {instance.instance_id}")
            for p in sorted(placements, key=lambda x: x.id):
                nid = component_node_id(p.id)
                if nid in self._g:
                    continue
                kind = NodeKind.DECOY if Role(p.role) is Role.DECOY else NodeKind.LURE
                tnode = self.ensure_target(p.target_id)
                digest = secret_digest(instance.secret) if kind is NodeKind.DECOY and instance.secret else None
                self._add_node(AgNode(nid, kind, p.id, not p.active, instance.instance_id, p.target_id, digest))
                self._add_edge(EdgeKind.PLACED_ON, nid, tnode, instance.instance_id)
            if decoy_id is not None:
                dnode = component_node_id(decoy_id)
                for lid in lure_ids:
                    self._add_edge(EdgeKind.UNLOCKS, component_node_id(lid), dnode, instance.instance_id)
                    self._add_edge(EdgeKind.PART_OF, component_node_id(lid), dnode, instance.instance_id)
            self._instances[instance.instance_id] = (decoy_id, lure_ids)
        return self._instance_nodes(instance.instance_id)

    def sync_targets(self, target_ids: Iterable[str]) -> None:
        """Materialize a node per live target and retire nodes of vanished ones."""
        live = set(target_ids)
        with self._lock:
            for tid in sorted(live):
                self.ensure_target(tid)
                node = self.node(target_node_id(tid))
                if node.retired:
                    self._g.nodes[node.id]["data"] = replace(node, retired=False)
            for n in self.nodes():
                if n.kind is NodeKind.TARGET and n.ref not in live and not n.retired:
                    self.retire_target(n.ref)

    def _instance_nodes(self, instance_id: str) -> list[str]:
        return sorted(n.id for n in self.nodes() if n.instance_id == instance_id)

    def retire_component(self, placement_id: str) -> None:
        with self._lock:
            nid = component_node_id(placement_id)
            node = self.node(nid)
            if not node.retired:
                self._g.nodes[nid]["data"] = replace(node, retired=True)

    def retire_target(self, target_id: str) -> None:
        with self._lock:
            nid = target_node_id(target_id)
            if nid in self._g:
                node = self.node(nid)
                self._g.nodes[nid]["data"] = replace(node, retired=True)

    # queries

    def unlocks_sources(self, decoy_placement_id: str) -> list[AgNode]:
        nid = component_node_id(decoy_placement_id)
        node = self.node(nid)
        if node.kind is not NodeKind.DECOY:
            raise ValidationError(f"{decoy_placement_id} is not a decoy component")
        preds = [u for u, _, k in self._g.in_edges(nid, keys=True) if k == EdgeKind.UNLOCKS.value]
        return [self.node(u) for u in sorted(preds)]

    def unlocks(self, lure_placement_id: str) -> list[AgNode]:
        nid = component_node_id(lure_placement_id)
        if nid not in self._g:
            return []
        succ = [v for _, v, k in self._g.out_edges(nid, keys=True) if k == EdgeKind.UNLOCKS.value]
        return [self.node(v) for v in sorted(succ)]

    def has_unlocks(self, lure_placement_id: str, decoy_placement_id: str) -> bool:
        return self._g.has_edge(
            component_node_id(lure_placement_id), component_node_id(decoy_placement_id), key=EdgeKind.UNLOCKS.value
        )

    def placements_on(self, target_id: str) -> list[AgNode]:
        nid = target_node_id(target_id)
        if nid not in self._g:
            return []
        preds = [u for u, _, k in self._g.in_edges(nid, keys=True) if k == EdgeKind.PLACED_ON.value]
        return [self.node(u) for u in sorted(preds)]

    def check(self) -> list[str]:
        """Return invariant violations (empty when the graph is consistent)."""
        problems = []
        for e in self.edges():
            if e.src not in self._g or e.dst not in self._g:
                problems.append(f"dangling {e.kind.value} {e.src}->{e.dst}")
                continue
            srcs, dsts = _EDGE_ENDPOINTS[e.kind]
            a, b = self.node(e.src), self.node(e.dst)
            if a.kind not in srcs or b.kind not in dsts:
                problems.append(f"mistyped {e.kind.value} {e.src}->{e.dst}")
            if e.kind is EdgeKind.UNLOCKS and a.instance_id != b.instance_id:
                problems.append(f"non-local UNLOCKS {e.src}->{e.dst}")
        return problems

    # export

    def to_dict(self) -> dict[str, Any]:
        return {
            "nodes": [n.to_dict() for n in self.nodes()],
            "edges": [e.to_dict() for e in self.edges()],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> AttackGraph:
        g = cls()
        for n in data.get("nodes", []):
            g._add_node(AgNode.from_dict(n))
        for e in data.get("edges", []):
            g._add_edge(EdgeKind(e["kind"]), e["from"], e["to"], e.get("instance_id"))
        for n in g.nodes():
            if n.kind is NodeKind.DECOY and n.instance_id:
                lures = tuple(sorted(x.ref for x in g.unlocks_sources(n.ref)))
                g._instances[n.instance_id] = (n.ref, lures)
        return g

    def export(self, format: str = "json") -> str:
        if format == "json":
            return json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if format == "dot":
            return self._to_dot()
        raise ValidationError(f"unsupported export format {format!r}")

    def _to_dot(self) -> str:
        shapes = {NodeKind.TARGET: "box", NodeKind.LURE: "ellipse", NodeKind.DECOY: "doubleoctagon"}
        lines = ["digraph attack_graph {", "  rankdir=LR;"]
        for n in self.nodes():
            label = n.ref if n.kind is NodeKind.TARGET else f"{n.instance_id}\\n{n.kind.value}\\n{n.ref}"
            attrs = [f'shape={shapes[n.kind]}', f'label="{label}"']
            if n.retired:
                attrs.append("style=filled")
                attrs.append('fillcolor="gray80"')
            lines.append(f'  "{n.id}" [{", ".join(attrs)}];')
        for e in self.edges():
            style = "dashed" if e.kind is EdgeKind.UNLOCKS else ("dotted" if e.kind is EdgeKind.PART_OF else "solid")
            lines.append(f'  "{e.src}" -> "{e.dst}" [label="{e.kind.value}", style={style}];')
        lines.append("}")
        return "\n".join(lines) + "\n"
