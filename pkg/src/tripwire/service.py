"""HTTP/JSON surface over one in-process :class:`~tripwire.runner.System`.

Every mutation goes through a single lock so the controller and the alarm
store keep their single-writer discipline; reads copy out under the same lock.
"""

from __future__ import annotations

import json
import logging
import threading
from pathlib import Path
from typing import Any, Optional

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, PlainTextResponse

from .alarms import RawAlarm
from .config import RunConfig
from .deploy import AccessEvent, DeployModuleDescriptor
from .environment import EnvironmentEvent
from .errors import DuplicateError, NotFoundError, TripwireError, ValidationError
from .reconstruction import Tracker, reconstruct_all
from .runner import System, load_inputs

log = logging.getLogger(__name__)

ALARM_LOG = "alarms.log.jsonl"
GRAPH_SNAPSHOT = "graph.snapshot.json"

_STATUS = {DuplicateError: 409, NotFoundError: 404, ValidationError: 400}


def _status_for(exc: TripwireError) -> int:
    for cls, status in _STATUS.items():
        if isinstance(exc, cls):
            return status
    return 409


def error_body(code: str, message: str) -> dict[str, Any]:
    return {"error": {"code": code, "message": message}}


class Service:
    """The live system plus optional persistence under ``state_dir``.

    On start-up an existing alarm log in ``state_dir`` is replayed into the
    store before new alarms are appended to it.
    """

    def __init__(self, config: RunConfig | None = None, state_dir: str | Path | None = None, *, deploy: bool = False):
        self.config = config or RunConfig()
        self.state_dir = Path(state_dir) if state_dir else None
        env_spec, definitions, modules = load_inputs(self.config)
        log_path = None
        if self.state_dir is not None:
            self.state_dir.mkdir(parents=True, exist_ok=True)
            log_path = self.state_dir / ALARM_LOG
        self.lock = threading.RLock()
        self.system = System(env_spec, definitions, modules, self.config, alarm_log=log_path)
        if deploy:
            self.system.deploy()
            self.snapshot()
        if log_path is not None and log_path.exists():
            n = self.system.store.restore(log_path)
            log.info("replayed %d alarm log records from %s", n, log_path)

    def snapshot(self) -> None:
        if self.state_dir is None:
            return
        path = self.state_dir / GRAPH_SNAPSHOT
        path.write_text(json.dumps(self.system.graph.to_dict(), sort_keys=True) + "\n", encoding="utf-8")


def _mapping(body: Any, what: str) -> dict[str, Any]:
    if not isinstance(body, dict):
        raise ValidationError(f"{what} body must be a JSON object")
    return body


def create_app(
    config: RunConfig | None = None,
    state_dir: str | Path | None = None,
    *,
    deploy: bool = False,
) -> FastAPI:
    svc = Service(config, state_dir, deploy=deploy)
    app = FastAPI(title="tripwire", version="1")
    app.state.service = svc
    system = svc.system

    @app.exception_handler(TripwireError)
    async def _tripwire_error(request: Request, exc: TripwireError):
        return JSONResponse(error_body(exc.code, str(exc)), status_code=_status_for(exc))

    @app.exception_handler(RequestValidationError)
    async def _request_error(request: Request, exc: RequestValidationError):
        return JSONResponse(error_body("malformed-request", str(exc.errors())), status_code=422)

    @app.get("/v1/health")
    def health():
        return {"status": "ok"}

    @app.get("/v1/deploy-modules")
    def list_modules():
        with svc.lock:
            return [dm.to_dict() for dm in system.registry.modules()]

    @app.post("/v1/deploy-modules", status_code=201)
    def register_module(body: Any = Body(...)):
        descriptor = DeployModuleDescriptor.from_dict(_mapping(body, "deploy module"))
        with svc.lock:
            system.registry.register(descriptor)
        return descriptor.to_dict()

    @app.post("/v1/deploy")
    def deploy_all():
        with svc.lock:
            placements = system.deploy()
            svc.snapshot()
            return {
                "placements": [p.to_dict() for p in placements],
                "coverage": system.controller.coverage().to_dict(),
            }

    @app.get("/v1/plan")
    def plan():
        with svc.lock:
            return system.controller.plan().to_dict()

    @app.get("/v1/placements")
    def placements(active_only: bool = False):
        with svc.lock:
            return [p.to_dict() for p in system.registry.placements(active_only=active_only)]

    @app.post("/v1/alarms", status_code=201)
    def ingest_alarm(body: Any = Body(...)):
        # parse first so malformed input is a 400 and not a silent dead letter
        raw = RawAlarm.from_dict(_mapping(body, "alarm"))
        with svc.lock:
            alarm_id = system.store.ingest(raw)
        return {"alarm_id": alarm_id}

    @app.post("/v1/accesses")
    def report_access(body: Any = Body(...)):
        data = _mapping(body, "access")
        try:
            event = AccessEvent(
                placement_id=str(data["placement_id"]),
                accessor=str(data["accessor"]),
                observables=dict(data.get("observables") or {}),
                timestamp=int(data["timestamp"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed access event: {exc}") from None
        with svc.lock:
            raw = system.registry.observe_access(event)
            alarm_id = system.store.ingest(raw) if raw is not None else None
        return {"alarm_id": alarm_id}

    @app.get("/v1/alarms")
    def query_alarms(
        t0: Optional[int] = None,
        t1: Optional[int] = None,
        placement_id: Optional[str] = None,
        accessor: Optional[str] = None,
        instance_id: Optional[str] = None,
    ):
        with svc.lock:
            found = system.store.query(
                t0, t1, placement_id=placement_id, accessor=accessor, instance_id=instance_id
            )
            return [a.to_dict() for a in found]

    @app.get("/v1/alarms/stats")
    def alarm_stats():
        with svc.lock:
            return system.store.stats().to_dict()

    @app.get("/v1/alarms/{alarm_id}")
    def get_alarm(alarm_id: str):
        with svc.lock:
            return system.store.get(alarm_id).to_dict()

    @app.get("/v1/graph")
    def graph(format: str = "json"):
        with svc.lock:
            if format == "dot":
                return PlainTextResponse(system.graph.export("dot"), media_type="text/vnd.graphviz")
            if format != "json":
                raise ValidationError(f"unknown graph format {format!r}")
            return system.graph.to_dict()

    @app.get("/v1/reconstruct/{alarm_id}")
    def reconstruct_from(alarm_id: str):
        with svc.lock:
            tracker = Tracker(system.store, system.graph, system.config.reconstruction)
            backward = tracker.backward(alarm_id)
            forward = tracker.forward(alarm_id)
        return {
            "alarm_id": alarm_id,
            "paths": [p.to_dict() for p in backward],
            "forward": [{"alarm_id": b, "via": via} for b, via in forward],
        }

    @app.get("/v1/campaigns")
    def campaigns():
        with svc.lock:
            paths = reconstruct_all(system.store, system.graph, system.config.reconstruction)
        return [p.to_dict() for p in paths]

    @app.get("/v1/coverage")
    def get_coverage():
        with svc.lock:
            return system.controller.coverage().to_dict()

    @app.post("/v1/events")
    def post_event(body: Any = Body(...)):
        event = EnvironmentEvent.from_dict(_mapping(body, "event"))
        with svc.lock:
            outcome = system.handle_event(event)
            svc.snapshot()
        return outcome.to_dict()

    return app


def serve(
    config: RunConfig,
    host: str = "127.0.0.1",
    port: int = 8080,
    state_dir: str | None = None,
    *,
    deploy: bool = True,
) -> None:
    import uvicorn

    app = create_app(config, state_dir, deploy=deploy)
    uvicorn.run(app, host=host, port=port, log_level="info")
