"""HTTP facade over the pipeline engine, the tracking simulator and the
study analytics.

Routes:

    POST /sessions                       multipart capture + prompt -> {id}
    GET  /sessions                       session list
    GET  /sessions/{id}                  session JSON
    GET  /sessions/{id}/artifacts/{kind} artifact bytes (binary, typed)
    POST /sessions/{id}/trajectory       trajectory JSON -> simulation run
    GET  /sessions/{id}/track            SSE stream of tracking snapshots
    POST /sessions/{id}/rating           {"rating": 1..7} -> 204
    GET  /analytics/records              study fixture + live rating records
    GET  /analytics/summary?group=A|B|C|all

Session creation kicks off run_to_completion on a worker thread, so status
reads stay fast while stages execute.  Artifact bodies are served as binary
with proper content types; JSON is reserved for metadata.
"""

from __future__ import annotations

import json
import logging
import os
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

from fastapi import FastAPI, Request, Response
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, StreamingResponse
from starlette.datastructures import UploadFile

from . import analytics, imaging
from .backends import BackendEndpoint, ControlMode, GenerationConfig, RemoteBackend, StubBackend, StubConfig
from .pipeline import (
    ARTIFACT_CONTENT_TYPES,
    CaptureInput,
    Engine,
    InvalidCapture,
    InvalidRating,
    InvalidTransition,
    NotFound,
    PipelineConfig,
    Stage,
)
from .tracking import TrackerConfig, Trajectory, run_trajectory

logger = logging.getLogger("propmorph.service")

SERVED_ARTIFACT_KINDS = ("depth_gray", "generated", "cutout", "mesh_obj", "target_ref", "capture_rgb")


@dataclass(frozen=True)
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8800
    root: Path = Path("./propmorph-data")
    backend_mode: str = "stub"  # "stub" or "remote"
    remote: BackendEndpoint | None = None
    stub: StubConfig = field(default_factory=StubConfig)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    tracker: TrackerConfig = field(default_factory=TrackerConfig)
    cors_origins: tuple[str, ...] = ()
    analytics_fixture: bool = True  # seed analytics with the bundled study records

    @staticmethod
    def from_file(path: str | Path) -> "ServiceConfig":
        """JSON config file; PROPMORPH_PORT / PROPMORPH_ROOT / PROPMORPH_BACKEND /
        PROPMORPH_ENDPOINT / PROPMORPH_AUTH_TOKEN env vars override."""
        d = json.loads(Path(path).read_text(encoding="utf-8")) if path else {}
        return ServiceConfig._from_dict(d)

    @staticmethod
    def from_env() -> "ServiceConfig":
        """Defaults with environment overrides applied (no config file)."""
        return ServiceConfig._from_dict({})

    @staticmethod
    def _from_dict(d: dict) -> "ServiceConfig":
        cfg = ServiceConfig(
            host=d.get("host", "127.0.0.1"),
            port=int(d.get("port", 8800)),
            root=Path(d.get("root", "./propmorph-data")),
            backend_mode=d.get("backend_mode", "stub"),
            remote=BackendEndpoint(**d["remote"]) if d.get("remote") else None,
            stub=StubConfig(**{**d.get("stub", {}),
                               **({"heightfield_grid": tuple(d["stub"]["heightfield_grid"])}
                                  if d.get("stub", {}).get("heightfield_grid") else {})}),
            pipeline=PipelineConfig(**d.get("pipeline", {})),
            tracker=TrackerConfig(**d.get("tracker", {})),
            cors_origins=tuple(d.get("cors_origins", ())),
            analytics_fixture=bool(d.get("analytics_fixture", True)),
        )
        env = os.environ
        if env.get("PROPMORPH_PORT"):
            cfg = replace(cfg, port=int(env["PROPMORPH_PORT"]))
        if env.get("PROPMORPH_ROOT"):
            cfg = replace(cfg, root=Path(env["PROPMORPH_ROOT"]))
        if env.get("PROPMORPH_BACKEND"):
            cfg = replace(cfg, backend_mode=env["PROPMORPH_BACKEND"])
        if env.get("PROPMORPH_ENDPOINT"):
            token = env.get("PROPMORPH_AUTH_TOKEN")
            cfg = replace(cfg, remote=BackendEndpoint(env["PROPMORPH_ENDPOINT"], auth_token=token))
        return cfg


def _sse(payload: dict, event: str | None = None) -> str:
    head = f"event: {event}\n" if event else ""
    return head + "data: " + json.dumps(payload) + "\n\n"


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig()
    if config.backend_mode == "remote" and config.remote is not None:
        backend = RemoteBackend(config.remote)
    else:
        backend = StubBackend(config.stub)
    engine = Engine(config.root, backend=backend, config=config.pipeline)
    executor = ThreadPoolExecutor(max_workers=4, thread_name_prefix="pipeline")
    app = FastAPI(title="propmorph service")
    app.state.engine = engine
    app.state.config = config

    fixture = analytics.load_study_fixture() if config.analytics_fixture else []
    track_logs: dict[str, object] = {}
    track_lock = threading.Lock()

    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=list(config.cors_origins),
            allow_methods=["*"],
            allow_headers=["*"],
        )

    if not logging.getLogger().handlers and not logger.handlers:
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(logging.Formatter("%(asctime)s %(name)s %(message)s"))
        logger.addHandler(handler)
        logger.setLevel(logging.INFO)

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        start = time.monotonic()
        response = await call_next(request)
        logger.info(
            '%s %s -> %d (%.1f ms)',
            request.method,
            request.url.path,
            response.status_code,
            (time.monotonic() - start) * 1000.0,
        )
        return response

    def _error(status: int, message: str) -> JSONResponse:
        return JSONResponse({"error": message}, status_code=status)

    @app.get("/healthz")
    def healthz():
        return {"ok": True}

    @app.post("/sessions", status_code=201)
    async def create_session(request: Request):
        form = await request.form()
        prompt = form.get("prompt")
        if not prompt or not str(prompt).strip():
            return _error(400, "missing or empty prompt")
        if config.backend_mode == "remote" and config.remote is None:
            return _error(503, "backend mode is remote but no endpoints are configured")
        required = {"rgb", "depth", "intrinsics"}
        missing = [k for k in required if not isinstance(form.get(k), UploadFile)]
        if missing:
            return _error(400, f"missing multipart file parts: {', '.join(sorted(missing))}")
        try:
            seed = int(form.get("seed", 0))
            mode = ControlMode(form.get("control_mode", "balanced"))
            rgb = imaging.load_rgb_png(await form["rgb"].read())
            depth = imaging.load_depth_png(await form["depth"].read())
            intr = imaging.load_intrinsics_json(await form["intrinsics"].read())
            mask = None
            if isinstance(form.get("mask"), UploadFile):
                mask = imaging.load_mask_png(await form["mask"].read())
            capture = CaptureInput(rgb=rgb, depth=depth, intrinsics=intr, mask=mask)
            cfg = GenerationConfig(prompt=str(prompt), seed=seed, control_mode=mode)
            session_id = engine.create_session(capture, str(prompt), cfg)
        except (InvalidCapture, ValueError) as e:
            return _error(400, str(e))
        executor.submit(engine.run_to_completion, session_id)
        return {"id": session_id}

    @app.get("/sessions")
    def list_sessions():
        return [s.to_dict() for s in engine.list_sessions()]

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        try:
            return engine.get_session(session_id).to_dict()
        except NotFound:
            return _error(404, f"unknown session {session_id}")

    @app.get("/sessions/{session_id}/artifacts/{kind}")
    def get_artifact(session_id: str, kind: str):
        if kind not in SERVED_ARTIFACT_KINDS:
            return _error(404, f"unknown artifact kind {kind!r}")
        try:
            data, content_type = engine.artifact(session_id, kind)
        except NotFound:
            return _error(404, f"artifact {kind!r} not available for session {session_id}")
        return Response(content=data, media_type=content_type)

    @app.post("/sessions/{session_id}/trajectory")
    def post_trajectory(session_id: str, body: dict):
        try:
            session = engine.get_session(session_id)
        except NotFound:
            return _error(404, f"unknown session {session_id}")
        if session.stage is not Stage.ANCHORED:
            return _error(409, f"session is {session.stage.value}, not Anchored")
        try:
            traj = Trajectory.from_dict(body)
            tracker = replace(config.tracker, **body.get("tracker", {}))
            target = engine.model_target(session_id)
        except (ValueError, TypeError, KeyError) as e:
            return _error(400, f"bad trajectory: {e}")
        log = run_trajectory(traj, target, tracker)
        with track_lock:
            track_logs[session_id] = (log, tracker)
        return {"frames": len(log.frames), "episodes": len(log.episodes)}

    @app.get("/sessions/{session_id}/track")
    def track_stream(session_id: str, pace: str = "realtime"):
        try:
            session = engine.get_session(session_id)
        except NotFound:
            return _error(404, f"unknown session {session_id}")
        if session.stage is not Stage.ANCHORED:
            return _error(409, f"session is {session.stage.value}, not Anchored")
        with track_lock:
            entry = track_logs.get(session_id)
        if entry is None:
            return _error(409, "no trajectory posted for this session")
        log, tracker = entry
        period = 1.0 / tracker.camera_fps

        def stream():
            prev = None
            for f in log.frames:
                if pace == "realtime" and prev is not None:
                    time.sleep(max(0.0, f.t - prev))
                prev = f.t
                snapshot = {
                    "session": session_id,
                    "t": f.t,
                    "phase": f.phase.value,
                    "pose": f.output_pose.to_dict() if f.output_pose else None,
                    "err_t_m": f.err_t_m,
                    "err_r_deg": f.err_r_deg,
                }
                yield _sse(snapshot)
            yield _sse({"episodes": log.episodes_summary()["episodes"]}, event="end")

        headers = {"Cache-Control": "no-cache", "X-Accel-Buffering": "no"}
        return StreamingResponse(stream(), media_type="text/event-stream", headers=headers)

    @app.post("/sessions/{session_id}/rating")
    def post_rating(session_id: str, body: dict):
        rating = body.get("rating")
        try:
            engine.record_rating(session_id, rating)
        except NotFound:
            return _error(404, f"unknown session {session_id}")
        except InvalidRating as e:
            return _error(400, str(e))
        return Response(status_code=204)

    def _all_records() -> list[analytics.PromptRecord]:
        live = [
            analytics.PromptRecord(
                participant=r["participant"],
                attempt=min(3, int(r["attempt"])),
                prompt=r["prompt"],
                rating=int(r["rating"]),
                group=r.get("group"),
            )
            for r in engine.live_rating_records()
        ]
        return fixture + live

    @app.get("/analytics/records")
    def analytics_records():
        return [r.to_dict() for r in _all_records()]

    @app.get("/analytics/summary")
    def analytics_summary(group: str = "all"):
        records = _all_records()
        if not records:
            return _error(404, "no rating records in the store")
        try:
            summary = analytics.summarize(records, group=group)
        except analytics.EmptySelection as e:
            return _error(404, str(e))
        except ValueError as e:
            return _error(400, str(e))
        return {"group": group, **summary.to_dict()}

    return app


def run(config: ServiceConfig):
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="warning")
