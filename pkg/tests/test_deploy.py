from __future__ import annotations

import pytest

from tripwire import fixtures
from tripwire.deploy import AccessEvent, DeployModuleDescriptor, DeployModuleRegistry
from tripwire.environment import Capability, EnvironmentEvent, EventKind, TargetKind, apply_event, build_environment
from tripwire.errors import CapabilityMismatchError, DuplicateError, IneligibleTargetError, NotFoundError
from tripwire.pool import Role, SecretStream


def _dm(**kw) -> DeployModuleDescriptor:
    return DeployModuleDescriptor.from_dict(kw)


def test_register_returns_id_and_rejects_duplicates(pool):
    reg = DeployModuleRegistry(pool)
    assert reg.register(_dm(id="dm-cloud", capability="create-bucket-decoy", target_selector={"targets": ["c1"]})) == "dm-cloud"
    assert len(reg) == 1
    with pytest.raises(DuplicateError):
        reg.register(_dm(id="dm-cloud", capability="create-bucket-decoy"))


def test_selector_matching_nothing_is_accepted(env_a):
    reg = DeployModuleRegistry()
    reg.register(_dm(id="dm-later", capability="inject-file-token", target_selector={"targets": ["f9"]}))
    assert reg.query(Capability.INJECT_FILE_TOKEN, env_a) == [("dm-later", [])]


def test_query_file_token(registry, env_a):
    assert registry.query(Capability.INJECT_FILE_TOKEN, env_a) == [("dm-fs1", ["f1"]), ("dm-fs2", ["f2"])]
    # c1 only offers bucket decoys
    assert registry.query(Capability.CREATE_SSH_DECOY, env_a) == [("dm-ssh", [])]
    empty = DeployModuleRegistry()
    assert empty.query(Capability.CREATE_SSH_DECOY, env_a) == []


def test_query_after_host_removed(registry, env_a):
    env, _ = apply_event(env_a, EnvironmentEvent(EventKind.HOST_REMOVED, "h2", 1))
    assert dict(registry.query(Capability.INJECT_FILE_TOKEN, env))["dm-fs2"] == []


def test_deploy_bucket_tripwire(registry, pool, env_a):
    inst = pool.instantiate("tw-bucket", SecretStream(42))
    decoy = registry.deploy("dm-cloud", inst, Role.DECOY, "c1", None, env_a)
    lure = registry.deploy("dm-fs1", inst, "lure", "f1", None, env_a, timestamp=5)
    assert (decoy.role, decoy.target_id, decoy.active) == (Role.DECOY, "c1", True)
    assert (lure.role, lure.target_id, lure.created_at) == (Role.LURE, "f1", 5)
    assert inst.secret in decoy.payload and inst.secret in lure.payload
    assert [p.id for p in registry.placements()] == [decoy.id, lure.id]


def test_deploy_errors(registry, pool, env_a):
    ssh = pool.instantiate("tw-ssh", SecretStream(1))
    with pytest.raises(CapabilityMismatchError):
        registry.deploy("dm-web", ssh, Role.DECOY, "web1", None, env_a)
    bucket = pool.instantiate("tw-bucket", SecretStream(1))
    with pytest.raises(IneligibleTargetError):
        registry.deploy("dm-fs1", bucket, Role.LURE, "f2", None, env_a)
    with pytest.raises(IneligibleTargetError):
        registry.deploy("dm-fs1", bucket, Role.LURE, "ghost", None, env_a)
    with pytest.raises(NotFoundError):
        registry.deploy("dm-none", bucket, Role.LURE, "f1", None, env_a)
    assert registry.placements() == []


def test_ssh_decoy_materializes_target(pool):
    env = build_environment(fixtures.env_ssh_spec())
    reg = DeployModuleRegistry(pool)
    for dm in fixtures.default_deploy_modules():
        reg.register(dm)
    inst = pool.instantiate("tw-ssh", SecretStream(3))
    p = reg.deploy("dm-ssh", inst, Role.DECOY, "c2", None, env)
    created = reg.decoy_hosts[p.id]
    assert p.materialized_target == created.id
    assert created.kind is TargetKind.DECOY_HOST and created.parent_host == "c2"
    reg.retract(p.id)
    assert p.id not in reg.decoy_hosts


def test_retract_idempotent(registry, pool, env_a):
    inst = pool.instantiate("tw-endpoint", SecretStream(0))
    p = registry.deploy("dm-web", inst, Role.DECOY, "web1", None, env_a)
    assert registry.retract(p.id).active is False
    assert registry.retract(p.id).active is False
    with pytest.raises(NotFoundError):
        registry.retract("p9999")


def test_observe_access(registry, pool, env_a):
    inst = pool.instantiate("tw-bucket", SecretStream(42))
    decoy = registry.deploy("dm-cloud", inst, Role.DECOY, "c1", None, env_a)
    raw = registry.observe_access(AccessEvent(decoy.id, "h1", {"secret": inst.secret}, 300))
    assert (raw.placement_id, raw.accessor, raw.observables["secret"], raw.timestamp) == (decoy.id, "h1", inst.secret, 300)
    assert raw.dm_id == "dm-cloud"
    registry.retract(decoy.id)
    assert registry.observe_access(AccessEvent(decoy.id, "h1", {}, 400)) is None
    assert registry.dropped_accesses[-1].timestamp == 400


def test_non_alarming_dm_drops_silently(pool, env_a):
    reg = DeployModuleRegistry(pool)
    reg.register(_dm(id="dm-quiet", capability="inject-file-token", alarm_capable=False))
    inst = pool.instantiate("tw-bucket", SecretStream(0))
    lure = reg.deploy("dm-quiet", inst, Role.LURE, "f1", None, env_a)
    assert reg.observe_access(AccessEvent(lure.id, "web1", {}, 10)) is None
    assert reg.observe_access(AccessEvent("p0404", "web1", {}, 10)) is None


def test_descriptor_round_trip():
    for dm in fixtures.default_deploy_modules():
        assert DeployModuleDescriptor.from_dict(dm.to_dict()) == dm
