from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from tripwire import fixtures
from tripwire.environment import (
    Capability,
    EnvironmentEvent,
    EnvironmentSpec,
    EventKind,
    HostSpec,
    TargetKind,
    apply_event,
    build_environment,
    enumerate_injection_points,
)
from tripwire.errors import DuplicateError, NotFoundError, ValidationError
from tripwire.deploy import Placement
from tripwire.pool import Role


def _placement(pid: str, target: str) -> Placement:
    return Placement(pid, "dm", "tw#1", Role.LURE, target, "", 0)


def test_env_a_has_five_targets(env_a):
    assert sorted(env_a.target_ids()) == ["app2", "c1", "f1", "f2", "web1"]
    assert env_a.target("web1").parent_host == "h1"
    assert env_a.target("c1").kind is TargetKind.CLOUD_SERVICE


def test_zero_hosts_is_valid():
    env = build_environment(EnvironmentSpec.from_dict({"hosts": [], "cloud_services": [], "reachability": []}))
    assert env.target_ids() == []
    assert enumerate_injection_points(env) == []


def test_duplicate_id_rejected():
    doc = {"hosts": [{"id": "h1", "targets": []}, {"id": "h1", "targets": []}]}
    with pytest.raises(DuplicateError):
        build_environment(EnvironmentSpec.from_dict(doc))


def test_dangling_reachability_rejected():
    doc = {"hosts": [], "cloud_services": [], "reachability": [["a", "b"]]}
    with pytest.raises(ValidationError):
        build_environment(EnvironmentSpec.from_dict(doc))


def test_unknown_capability_rejected():
    doc = {"hosts": [{"id": "h1", "targets": [{"id": "p", "kind": "process", "capabilities": ["teleport"]}]}]}
    with pytest.raises(ValidationError):
        build_environment(EnvironmentSpec.from_dict(doc))


def test_spec_round_trip():
    spec = fixtures.env_a_spec()
    assert EnvironmentSpec.from_dict(spec.to_dict()) == spec


def test_injection_points_env_a(env_a):
    points = enumerate_injection_points(env_a)
    assert len(points) == 7
    assert points == sorted(points, key=lambda p: (p[0], p[1].value))
    per_target = {}
    for t, _ in points:
        per_target[t] = per_target.get(t, 0) + 1
    assert per_target == {"web1": 3, "f1": 1, "app2": 1, "f2": 1, "c1": 1}
    assert ("c1", Capability.CREATE_BUCKET_DECOY) in points


def test_host_removed_drops_pairs(env_a):
    env, invalid = apply_event(env_a, EnvironmentEvent(EventKind.HOST_REMOVED, "h2", 10))
    assert len(enumerate_injection_points(env)) == 5
    assert "app2" not in env and "f2" not in env
    assert invalid == []


def test_app_redeployed_invalidates_placements_on_target(env_a):
    ps = [_placement("p1", "web1"), _placement("p2", "web1"), _placement("p3", "f1")]
    env, invalid = apply_event(env_a, EnvironmentEvent(EventKind.APP_REDEPLOYED, "web1", 5), ps)
    assert invalid == ["p1", "p2"]
    assert env == env_a


def test_host_added_never_invalidates(env_a):
    host = HostSpec.from_dict({"id": "h3", "targets": [{"id": "f3", "kind": "host-filesystem", "capabilities": ["inject-file-token"]}]})
    env, invalid = apply_event(env_a, EnvironmentEvent(EventKind.HOST_ADDED, "h3", 5, host), [_placement("p1", "f1")])
    assert invalid == []
    assert env.target("f3").parent_host == "h3"


def test_host_removed_invalidates_children(env_a):
    ps = [_placement("p1", "web1"), _placement("p2", "web1"), _placement("p3", "f1"), _placement("p4", "c1")]
    env, invalid = apply_event(env_a, EnvironmentEvent(EventKind.HOST_REMOVED, "h1", 5), ps)
    assert invalid == ["p1", "p2", "p3"]
    assert "web1" not in env and "f1" not in env
    assert all("web1" not in pair and "f1" not in pair for pair in env.reachability)


def test_event_errors(env_a):
    with pytest.raises(NotFoundError):
        apply_event(env_a, EnvironmentEvent(EventKind.APP_REDEPLOYED, "ghost", 0))
    with pytest.raises(ValidationError):
        apply_event(env_a, EnvironmentEvent(EventKind.APP_REDEPLOYED, "f1", 0))
    with pytest.raises(NotFoundError):
        apply_event(env_a, EnvironmentEvent(EventKind.HOST_REMOVED, "h9", 0))
    with pytest.raises(ValidationError):
        EnvironmentEvent.from_dict({"kind": "app-redeployed", "target_id": "web1", "timestamp": "soon"})


@given(st.lists(st.sampled_from(["h1", "h2"]), max_size=3, unique=True))
def test_removal_is_deterministic_and_conserving(removed):
    env = build_environment(fixtures.env_a_spec())
    again = build_environment(fixtures.env_a_spec())
    for h in removed:
        env, _ = apply_event(env, EnvironmentEvent(EventKind.HOST_REMOVED, h, 1))
        again, _ = apply_event(again, EnvironmentEvent(EventKind.HOST_REMOVED, h, 1))
    assert env == again
    listed = {t for t, _ in enumerate_injection_points(env)}
    gone = {t for h in removed for t in build_environment(fixtures.env_a_spec()).children(h)}
    assert not listed & gone
