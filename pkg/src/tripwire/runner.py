"""End-to-end life cycle: deploy, attack, store alarms, reconstruct, evaluate."""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Union

from . import fixtures
from .adversary import (
    Adversary,
    AlarmTruth,
    GroundTruthTrace,
    ScenarioStep,
    forge_alarms,
    generate_random_scenario,
    parse_scenario,
    truth_in_alarms,
    validate_scenario,
)
from .alarms import AlarmStore, RawAlarm
from .config import RunConfig
from .controller import DeploymentController
from .deploy import DeployModuleDescriptor, DeployModuleRegistry
from .environment import EnvironmentEvent, EnvironmentSpec, build_environment
from .errors import StageError, TripwireError, ValidationError
from .pool import TripwireDefinition, TripwirePool
from .reconstruction import AttackPath, Metrics, Tracker, check_soundness, evaluate, reconstruct_all

log = logging.getLogger(__name__)


class System:
    """The live framework: registry, pool, controller, graph, and alarm store in one process."""

    def __init__(
        self,
        env_spec: EnvironmentSpec | dict,
        definitions: Iterable[TripwireDefinition],
        deploy_modules: Iterable[DeployModuleDescriptor] = (),
        config: RunConfig | None = None,
        alarm_log: str | Path | None = None,
    ):
        self.config = config or RunConfig()
        self.pool = TripwirePool(definitions)
        self.registry = DeployModuleRegistry(self.pool)
        for dm in deploy_modules:
            self.registry.register(dm)
        self.controller = DeploymentController(
            build_environment(env_spec), self.pool, self.registry, budget=self.config.budget, seed=self.config.seed
        )
        self.store = AlarmStore(self.config.bucket_ms, instance_of=self.controller.instance_of, log_path=alarm_log)

    @property
    def env(self):
        return self.controller.env

    @property
    def graph(self):
        return self.controller.graph

    def deploy(self):
        return self.controller.deploy_all()

    def observe(self, events) -> list[str | None]:
        """Pass access events through the DMs' alarm systems into the store."""
        ids: list[str | None] = []
        for ev in sorted(enumerate(events), key=lambda pair: (pair[1].timestamp, pair[0])):
            raw = self.registry.observe_access(ev[1])
            ids.append((ev[0], self.store.ingest(raw) if raw is not None else None))
        ids.sort()
        return [aid for _, aid in ids]

    def handle_event(self, event: EnvironmentEvent):
        return self.controller.handle_event(event)

    def tracker(self) -> Tracker:
        return Tracker(self.store, self.graph, self.config.reconstruction)

    def reconstruct(self) -> list[AttackPath]:
        return reconstruct_all(self.store, self.graph, self.config.reconstruction)


@dataclass
class Attack:
    steps: list[ScenarioStep]
    trace: GroundTruthTrace
    truth: AlarmTruth
    event_alarms: list[str | None] = field(default_factory=list)


ScriptItem = Union[EnvironmentEvent, RawAlarm]


def parse_script(document: Any) -> list[ScriptItem]:
    """Scripted inputs: environment events, plus externally reported raw alarms under an ``alarm`` key."""
    if document is None:
        return []
    if not isinstance(document, list):
        raise ValidationError("event script must be a list")
    out: list[ScriptItem] = []
    for item in document:
        if isinstance(item, Mapping) and "alarm" in item:
            out.append(RawAlarm.from_dict(item["alarm"]))
        else:
            out.append(EnvironmentEvent.from_dict(item))
    return out


def apply_script_item(system: System, item: ScriptItem) -> None:
    if isinstance(item, RawAlarm):
        system.store.ingest(item)
    else:
        system.handle_event(item)


def play(
    system: System,
    steps: list[ScenarioStep],
    events: Iterable[ScriptItem] = (),
    seed: int = 0,
    forged: int = 0,
) -> Attack:
    """Drive the adversary through ``steps``, applying scripted items at their timestamps.

    A scripted item and a step with the same timestamp: the item goes first.
    """
    ctrl = system.controller
    adversary = Adversary(ctrl.env, system.registry.placements(), seed, instances=ctrl.instances.values())
    validate_scenario(ctrl.env, adversary.world, steps)
    pending = [item for _, item in sorted(enumerate(events), key=lambda p: (p[1].timestamp, p[0]))]
    event_alarms: list[str | None] = []
    for step in steps:
        changed = False
        while pending and pending[0].timestamp <= step.at:
            item = pending.pop(0)
            apply_script_item(system, item)
            changed = changed or isinstance(item, EnvironmentEvent)
        if changed:
            adversary.refresh(ctrl.env, system.registry.placements(), ctrl.instances.values())
        event_alarms.extend(system.observe(adversary.play(step)))
    for item in pending:
        apply_script_item(system, item)

    trace = adversary.trace
    if forged:
        t_max = max((s.at for s in steps), default=0) + 100
        trace.forged = forge_alarms(ctrl.env, system.registry.placements(), forged, seed, t_max)
        system.store.ingest_many(trace.forged)
    return Attack(steps, trace, truth_in_alarms(trace, event_alarms), event_alarms)


@dataclass
class RunReport:
    coverage: dict[str, Any]
    graph: dict[str, Any]
    alarms: list[dict[str, Any]]
    campaigns: list[dict[str, Any]]
    metrics: dict[str, Any]
    timing: dict[str, Any]
    scenario: list[dict[str, Any]]
    placements: list[dict[str, Any]]
    soundness_violations: list[str]

    def to_dict(self) -> dict[str, Any]:
        return {
            "coverage": self.coverage,
            "attack_graph": self.graph,
            "alarms": self.alarms,
            "campaigns": self.campaigns,
            "metrics": self.metrics,
            "timing": self.timing,
            "scenario": self.scenario,
            "placements": self.placements,
            "soundness_violations": self.soundness_violations,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _stage(name: str, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except (TripwireError, OSError) as exc:
        raise StageError(name, exc) from exc


def load_inputs(config: RunConfig):
    env_doc = _stage("environment", fixtures.load_document, config.env_path) if config.env_path else None
    env_spec = _stage("environment", EnvironmentSpec.from_dict, env_doc) if env_doc is not None else fixtures.env_a_spec()
    if config.tripwires_path:
        catalog = _stage("tripwires", fixtures.load_document, config.tripwires_path)
        definitions = _stage("tripwires", TripwirePool().load_definitions, catalog)
    else:
        definitions = fixtures.builtin_catalog()
    if config.deploy_modules_path:
        dms = _stage("deploy-modules", fixtures.load_document, config.deploy_modules_path)
        modules = _stage("deploy-modules", fixtures.parse_deploy_modules, dms)
    else:
        modules = fixtures.default_deploy_modules()
    return env_spec, definitions, modules


@dataclass
class RunResult:
    report: RunReport
    system: System
    attack: Attack


def run(config: RunConfig, *, write: bool = True) -> RunReport:
    """Full life cycle; writes report.json, graph.dot and alarms.jsonl to ``config.out_dir``."""
    result = simulate(config)
    if write:
        _stage("output", write_report, result.report, result.system, Path(config.out_dir))
    return result.report


def simulate(config: RunConfig) -> RunResult:
    """Everything ``run`` does except writing files."""
    started = time.perf_counter()
    env_spec, definitions, modules = load_inputs(config)
    system = _stage("build", System, env_spec, definitions, modules, config)
    _stage("deploy", system.deploy)
    t_deploy = time.perf_counter()

    if config.scenario_path:
        doc = _stage("scenario", fixtures.load_document, config.scenario_path)
        steps = _stage("scenario", parse_scenario, doc)
    else:
        steps = generate_random_scenario(
            system.env,
            system.registry.placements(),
            config.scenario_length,
            config.seed,
            instances=system.controller.instances.values(),
        )
    events = []
    if config.events_path:
        doc = _stage("events", fixtures.load_document, config.events_path)
        events = _stage("events", parse_script, doc)
    attack = _stage("adversary", play, system, steps, events, config.seed, config.forged_alarm_rate)
    t_attack = time.perf_counter()

    campaigns = _stage("reconstruct", system.reconstruct)
    metrics: Metrics = evaluate(campaigns, attack.truth)
    t_done = time.perf_counter()

    report = RunReport(
        coverage=system.controller.coverage().to_dict(),
        graph=system.graph.to_dict(),
        alarms=[a.to_dict() for a in system.store.all()],
        campaigns=[c.to_dict() for c in campaigns],
        metrics={**metrics.to_dict(), "truth_chain": list(attack.truth.chain)},
        # simulated clock only: wall-clock numbers would break byte-identical reports
        timing={
            "first_step_ms": min((s.at for s in steps), default=0),
            "last_step_ms": max((s.at for s in steps), default=0),
            "scenario_steps": len(steps),
            **system.store.stats().to_dict(),
        },
        scenario=[s.to_dict() for s in steps],
        placements=[p.to_dict() for p in system.registry.placements()],
        soundness_violations=check_soundness(campaigns, system.store, system.graph),
    )
    log.info(
        "deploy %.1f ms, attack %.1f ms, reconstruct %.1f ms",
        (t_deploy - started) * 1e3,
        (t_attack - t_deploy) * 1e3,
        (t_done - t_attack) * 1e3,
    )
    return RunResult(report, system, attack)


def write_report(report: RunReport, system: System, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(report.to_json(), encoding="utf-8")
    (out_dir / "graph.dot").write_text(system.graph.export("dot"), encoding="utf-8")
    with (out_dir / "alarms.jsonl").open("w", encoding="utf-8") as fh:
        for a in report.alarms:
            fh.write(json.dumps(a, sort_keys=True) + "\n")
