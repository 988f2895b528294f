from __future__ import annotations

import pytest

from tripwire import fixtures
from tripwire.adversary import parse_scenario
from tripwire.config import RunConfig
from tripwire.controller import Budget
from tripwire.deploy import DeployModuleRegistry
from tripwire.environment import build_environment
from tripwire.pool import TripwirePool
from tripwire.runner import System, play


@pytest.fixture
def env_a():
    return build_environment(fixtures.env_a_spec())


@pytest.fixture
def pool():
    return TripwirePool(fixtures.builtin_catalog())


@pytest.fixture
def registry(pool):
    reg = DeployModuleRegistry(pool)
    for dm in fixtures.default_deploy_modules():
        reg.register(dm)
    return reg


def make_system(catalog=None, budget: Budget | None = None, env_spec=None, **config) -> System:
    cfg = RunConfig(budget=budget or Budget(), **config)
    return System(
        env_spec or fixtures.env_a_spec(),
        catalog if catalog is not None else fixtures.builtin_catalog(),
        fixtures.default_deploy_modules(),
        cfg,
    )


@pytest.fixture
def s1_system():
    """env-A with the built-in catalog, deployed, after playing scenario S1."""
    system = make_system()
    system.deploy()
    attack = play(system, parse_scenario(fixtures.s1_scenario()))
    return system, attack
