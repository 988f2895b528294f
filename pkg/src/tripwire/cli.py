"""Command line entry point: ``tripwire run|serve|plan|graph export|reconstruct|eval``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

from .config import RunConfig, load_config
from .errors import StageError, TripwireError
from .reconstruction import Tracker
from .runner import System, _stage, load_inputs, simulate, write_report

log = logging.getLogger("tripwire")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML config file")
    p.add_argument("--env", dest="env_path", help="environment spec (YAML/JSON)")
    p.add_argument("--tripwires", dest="tripwires_path", help="tripwire catalog")
    p.add_argument("--deploy-modules", dest="deploy_modules_path", help="deploy module descriptors")
    p.add_argument("--scenario", dest="scenario_path", help="scripted scenario; random when omitted")
    p.add_argument("--events", dest="events_path", help="scripted environment events and raw alarms")
    p.add_argument("--length", dest="scenario_length", type=int, help="random scenario length")
    p.add_argument("--forged", dest="forged_alarm_rate", type=int, help="forged alarms injected per run")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", dest="out_dir", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tripwire", description="Deploy, attack and reconstruct tripwires.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="full life cycle, writes report files"))

    serve = sub.add_parser("serve", help="HTTP/JSON service")
    _common(serve)
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--state-dir", help="alarm log and graph snapshots; replayed on start")
    serve.add_argument("--no-deploy", action="store_true", help="start with no placements")

    _common(sub.add_parser("plan", help="print the deployment plan without executing it"))

    graph = sub.add_parser("graph", help="attack graph operations")
    graph_sub = graph.add_subparsers(dest="graph_command", required=True)
    export = graph_sub.add_parser("export", help="export the deployed attack graph")
    _common(export)
    export.add_argument("--format", choices=("dot", "json"), default="dot")

    rec = sub.add_parser("reconstruct", help="backward and forward tracking from one alarm of a run")
    _common(rec)
    rec.add_argument("--alarm", required=True, help="condensed alarm id, e.g. a3")

    ev = sub.add_parser("eval", help="evaluation metrics over one or more seeds")
    _common(ev)
    ev.add_argument("--runs", type=int, default=1, help="consecutive seeds starting at --seed")
    return parser


def _config(args: argparse.Namespace) -> RunConfig:
    keys = (
        "env_path",
        "tripwires_path",
        "deploy_modules_path",
        "scenario_path",
        "events_path",
        "scenario_length",
        "forged_alarm_rate",
        "seed",
        "out_dir",
    )
    cli = {k: getattr(args, k, None) for k in keys}
    try:
        return load_config(args.config, cli)
    except (TripwireError, OSError) as exc:
        raise StageError("config", exc) from exc


def _emit(data: Any) -> None:
    sys.stdout.write(json.dumps(data, indent=2, sort_keys=True) + "\n")


def _deployed(config: RunConfig) -> System:
    env_spec, definitions, modules = load_inputs(config)
    system = _stage("build", System, env_spec, definitions, modules, config)
    _stage("deploy", system.deploy)
    return system


def cmd_run(config: RunConfig, args: argparse.Namespace) -> int:
    result = simulate(config)
    _stage("output", write_report, result.report, result.system, Path(config.out_dir))
    _emit({"out": config.out_dir, "metrics": result.report.metrics, "coverage": result.report.coverage["ratio"]})
    return 0


def cmd_serve(config: RunConfig, args: argparse.Namespace) -> int:
    from .service import serve

    _stage("serve", serve, config, args.host, args.port, args.state_dir, deploy=not args.no_deploy)
    return 0


def cmd_plan(config: RunConfig, args: argparse.Namespace) -> int:
    env_spec, definitions, modules = load_inputs(config)
    system = _stage("build", System, env_spec, definitions, modules, config)
    _emit(_stage("plan", system.controller.plan).to_dict())
    return 0


def cmd_graph(config: RunConfig, args: argparse.Namespace) -> int:
    system = _deployed(config)
    sys.stdout.write(_stage("graph", system.graph.export, args.format))
    if args.format == "json":
        sys.stdout.write("\n")
    return 0


def cmd_reconstruct(config: RunConfig, args: argparse.Namespace) -> int:
    result = simulate(config)
    system = result.system
    tracker = Tracker(system.store, system.graph, config.reconstruction)
    paths = _stage("reconstruct", tracker.backward, args.alarm)
    forward = tracker.forward(args.alarm)
    _emit(
        {
            "alarm_id": args.alarm,
            "paths": [p.to_dict() for p in paths],
            "forward": [{"alarm_id": b, "via": via} for b, via in forward],
        }
    )
    return 0


def cmd_eval(config: RunConfig, args: argparse.Namespace) -> int:
    if args.runs < 1:
        raise StageError("config", ValueError("--runs must be at least 1"))
    rows = []
    for i in range(args.runs):
        report = simulate(replace(config, seed=config.seed + i)).report
        rows.append({"seed": config.seed + i, **{k: report.metrics[k] for k in ("precision", "recall", "f1", "top1_exact")}})
    n = len(rows)
    _emit(
        {
            "runs": rows if n > 1 else rows[0],
            "mean_precision": sum(r["precision"] for r in rows) / n,
            "mean_recall": sum(r["recall"] for r in rows) / n,
            "top1_exact": sum(bool(r["top1_exact"]) for r in rows),
        }
    )
    return 0


COMMANDS = {
    "run": cmd_run,
    "serve": cmd_serve,
    "plan": cmd_plan,
    "graph": cmd_graph,
    "reconstruct": cmd_reconstruct,
    "eval": cmd_eval,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        config = _config(args)
        return COMMANDS[args.command](config, args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TripwireError as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
