from __future__ import annotations

import json

import pytest
import yaml

from tripwire import fixtures
from tripwire.config import RunConfig, apply_overrides, load_config
from tripwire.controller import Budget
from tripwire.errors import StageError, ValidationError
from tripwire.runner import parse_script, run


def _s1_config(tmp_path, **kw) -> RunConfig:
    return RunConfig(scenario_path=str(fixtures.data_path("s1.yaml")), seed=42, out_dir=str(tmp_path / "out"), **kw)


def test_run_s1_writes_reports(tmp_path):
    report = run(_s1_config(tmp_path))
    assert report.metrics["top1_exact"] is True
    assert report.metrics["truth_chain"] == ["a1", "a2", "a3"]
    out = tmp_path / "out"
    assert {p.name for p in out.iterdir()} == {"report.json", "graph.dot", "alarms.jsonl"}
    doc = json.loads((out / "report.json").read_text())
    assert set(doc) >= {"coverage", "attack_graph", "alarms", "campaigns", "metrics", "timing"}
    assert len((out / "alarms.jsonl").read_text().splitlines()) == 3
    assert doc["timing"]["raw_ingested"] == 3


def test_run_is_byte_identical(tmp_path):
    a = run(_s1_config(tmp_path / "a")).to_json()
    b = run(_s1_config(tmp_path / "b")).to_json()
    assert a == b
    r1 = run(RunConfig(seed=5, forged_alarm_rate=10, out_dir=str(tmp_path / "c"))).to_json()
    r2 = run(RunConfig(seed=5, forged_alarm_rate=10, out_dir=str(tmp_path / "d"))).to_json()
    assert r1 == r2


def test_missing_scenario_is_stage_tagged(tmp_path):
    with pytest.raises(StageError) as info:
        run(RunConfig(scenario_path=str(tmp_path / "nope.yaml")), write=False)
    assert info.value.stage == "scenario"
    assert str(info.value).startswith("[scenario]")


def test_bad_env_is_stage_tagged(tmp_path):
    bad = tmp_path / "env.yaml"
    bad.write_text(yaml.safe_dump({"hosts": [{"id": "h1", "targets": [{"id": "h1", "kind": "process", "capabilities": []}]}]}))
    with pytest.raises(StageError) as info:
        run(RunConfig(env_path=str(bad)), write=False)
    assert info.value.stage in ("environment", "build")


def test_event_script_mixes_alarms_and_events(tmp_path):
    script = [
        {"kind": "app-redeployed", "target_id": "web1", "timestamp": 50},
        {"alarm": {"placement_id": "p0002", "dm_id": "dm-fs1", "accessor": "web1", "timestamp": 60}},
    ]
    items = parse_script(script)
    assert [type(i).__name__ for i in items] == ["EnvironmentEvent", "RawAlarm"]
    path = tmp_path / "events.yaml"
    path.write_text(yaml.safe_dump(script))
    empty = tmp_path / "empty.yaml"
    empty.write_text("[]\n")
    report = run(RunConfig(scenario_path=str(empty), events_path=str(path)), write=False)
    assert [a["placement_id"] for a in report.alarms] == ["p0002"]
    retired = [n for n in report.graph["nodes"] if n["retired"] and n["kind"] != "target"]
    assert [n["ref"] for n in retired] == ["p0005"]
    with pytest.raises(ValidationError):
        parse_script({"kind": "app-redeployed"})


def test_config_precedence(tmp_path):
    cfg = tmp_path / "c.yaml"
    cfg.write_text(yaml.safe_dump({"seed": 1, "bucket_ms": 500, "budget": {"max_components_per_target": 2}}))
    env = {"TRIPWIRE_SEED": "2", "TRIPWIRE_MAX_DEPTH": "4"}
    c = load_config(cfg, {"seed": 3, "out_dir": None}, env)
    assert (c.seed, c.bucket_ms, c.budget.max_components_per_target, c.reconstruction.max_depth) == (3, 500, 2, 4)
    assert load_config(cfg, None, env).seed == 2
    assert load_config(cfg, None, {}).seed == 1
    assert c.out_dir == "out"


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(ValidationError):
        apply_overrides(RunConfig(), {"sed": 1})
    with pytest.raises(ValidationError):
        apply_overrides(RunConfig(), {"seed": "many"})
    with pytest.raises(ValidationError):
        apply_overrides(RunConfig(), {"budget": {"max_instances_per_definition": 0}})
    assert apply_overrides(RunConfig(), {"window": 500}).reconstruction.window == 500
    assert RunConfig().budget == Budget(3, 5)
