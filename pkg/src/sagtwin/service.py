"""Session-oriented HTTP service around the live loop.

Commands go over JSON endpoints, snapshots stream out over server-sent
events.  Sessions are in-memory and single-writer: every mutation runs
under the session's lock, so concurrent advances conflict (409) instead of
interleaving.  An optional JSON-lines event log per session makes runs
replayable.

Endpoints (paths normative):
    POST /sessions                    create (cold start or artifacts)
    GET  /sessions/{id}               latest snapshot + config summary
    POST /sessions/{id}/advance       step the loop n steps
    PUT  /sessions/{id}/ylim          adjust operating limits
    POST /sessions/{id}/disturbance   inject liner wear / ore hardness
    PUT  /sessions/{id}/mode          paused | running | step  (+ speed)
    GET  /sessions/{id}/stream        SSE snapshot feed
    GET  /sessions/{id}/export        CSV bundle (zip)

The exact snapshot field names are documented in docs/api-schema.json.
"""

from __future__ import annotations

import asyncio
import csv
import io
import json
import secrets
import threading
import zipfile
from dataclasses import replace
from typing import Literal

from fastapi import FastAPI, HTTPException, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response, StreamingResponse
from pydantic import BaseModel, Field, field_validator

from . import plant, workflow
from .config import RunConfig
from .errors import SagTwinError
from .fuzzy import YLim
from .session import EngineConfig, SessionEngine


class PlantOverrides(BaseModel):
    noise_std: list[float] | None = None
    seed: int | None = None

    @field_validator("noise_std")
    @classmethod
    def _noise_nonneg(cls, v):
        if v is not None and any(s < 0 for s in v):
            raise ValueError("plant.noise_std must be >= 0")
        return v


class CreateSessionRequest(BaseModel):
    """Session bootstrap: either load trained artifacts from a run directory
    or cold-start (generate + identify + train + calibrate) from the given
    config overrides."""

    mode: Literal["artifacts", "cold_start"] = "artifacts"
    artifacts_dir: str | None = None
    config: dict = Field(default_factory=dict)
    plant: PlantOverrides | None = None
    seed_offset: int = 0
    optimize_ylim: bool = False
    event_log_path: str | None = None


class AdvanceRequest(BaseModel):
    steps: int = Field(ge=0, le=100000)


class YlimRequest(BaseModel):
    y1_lim: float
    y2_lim: float


class DisturbanceRequest(BaseModel):
    kind: Literal["liner_wear", "ore_hardness"]
    magnitude: float = Field(ge=0)
    onset_step: int | None = None   # default: next step
    ramp_steps: int = Field(default=0, ge=0)


class ModeRequest(BaseModel):
    mode: Literal["paused", "running", "step"]
    speed: float = Field(default=2.0, gt=0, le=1000)


class SessionRuntime:
    def __init__(self, engine: SessionEngine, event_log_path: str | None = None):
        self.engine = engine
        self.lock = threading.Lock()
        self.snapshots: list[dict] = []
        self.subscribers: list[asyncio.Queue] = []
        self.run_task: asyncio.Task | None = None
        self.event_log_path = event_log_path

    def advance_locked(self, steps: int) -> list[dict]:
        if not self.lock.acquire(blocking=False):
            raise HTTPException(status_code=409, detail="session is already advancing")
        try:
            new = self.engine.advance(steps)
            self.snapshots.extend(new)
            if self.event_log_path:
                with open(self.event_log_path, "a", encoding="utf-8") as fh:
                    for snap in new:
                        fh.write(json.dumps(snap, sort_keys=True) + "\n")
            return new
        finally:
            self.lock.release()

    def push(self, snaps: list[dict]) -> None:
        for q in list(self.subscribers):
            for snap in snaps:
                q.put_nowait(snap)


def _bootstrap_engine(req: CreateSessionRequest) -> SessionEngine:
    overrides = dict(req.config)
    cfg = RunConfig.from_dict(overrides)
    if req.plant is not None:
        plant_kwargs = {}
        if req.plant.noise_std is not None:
            plant_kwargs["noise_std"] = tuple(req.plant.noise_std)
        if req.plant.seed is not None:
            plant_kwargs["seed"] = req.plant.seed
        cfg.plant = replace(cfg.plant, **plant_kwargs)

    if req.mode == "artifacts":
        if not req.artifacts_dir:
            raise HTTPException(status_code=422, detail="artifacts_dir required for mode=artifacts")
        cfg = RunConfig.from_dict({**overrides, "output_dir": req.artifacts_dir})
        if req.plant is not None and req.plant.seed is not None:
            cfg.plant = replace(cfg.plant, seed=req.plant.seed)
        try:
            reg, nx, det_cfg = workflow.load_models(cfg)
            references = workflow.load_references(cfg.output_dir)
        except FileNotFoundError as exc:
            raise HTTPException(status_code=422, detail=f"artifacts missing: {exc}") from exc
        m_d = {k: int(v) for k, v in det_cfg["m_d"].items()}
        n_e = int(det_cfg["n_e"])
    else:
        try:
            workflow.stage_generate(cfg)
            workflow.stage_prepare(cfg)
            workflow.stage_identify(cfg)
            workflow.stage_train(cfg)
            det_cfg = workflow.stage_calibrate(cfg)
        except SagTwinError as exc:
            raise HTTPException(status_code=422, detail=f"cold start failed: {exc}") from exc
        reg, nx, det_cfg = workflow.load_models(cfg)
        references = workflow.load_references(cfg.output_dir)
        m_d = {k: int(v) for k, v in det_cfg["m_d"].items()}
        n_e = int(det_cfg["n_e"])
    engine_cfg = EngineConfig(run=cfg, n_e=n_e, m_d=m_d, optimize_ylim=req.optimize_ylim)
    return SessionEngine(engine_cfg, reg, nx, references, seed_offset=req.seed_offset)


def create_app(base_cfg: RunConfig | None = None) -> FastAPI:
    app = FastAPI(title="sagtwin twin-service", version="0.1.0")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    sessions: dict[str, SessionRuntime] = {}
    app.state.sessions = sessions
    app.state.base_cfg = base_cfg

    def _get(session_id: str) -> SessionRuntime:
        rt = sessions.get(session_id)
        if rt is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        return rt

    @app.post("/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        if req.mode == "artifacts" and req.artifacts_dir is None and base_cfg is not None:
            req.artifacts_dir = str(base_cfg.output_dir)
        engine = _bootstrap_engine(req)
        session_id = secrets.token_hex(8)
        sessions[session_id] = SessionRuntime(engine, req.event_log_path)
        return {
            "id": session_id,
            "warmup_steps": engine.warmup_steps,
            "ylim": {"y1_lim": engine.ylim.y1, "y2_lim": engine.ylim.y2},
            "ylim_box": engine.twin.config.ylim_box,
            "m_d": {cv: d.m_d for cv, d in engine.detector.detectors.items()},
            "horizon": engine.twin.config.horizon,
        }

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        rt = _get(session_id)
        return {
            "id": session_id,
            "step": rt.engine.step_index,
            "mode": rt.engine.mode,
            "warmup_steps": rt.engine.warmup_steps,
            "twin_active": rt.engine.twin_active,
            "ylim": {"y1_lim": rt.engine.ylim.y1, "y2_lim": rt.engine.ylim.y2},
            "last_snapshot": rt.snapshots[-1] if rt.snapshots else None,
            "events": rt.engine.events[-50:],
        }

    @app.post("/sessions/{session_id}/advance")
    def advance(session_id: str, req: AdvanceRequest):
        rt = _get(session_id)
        if rt.engine.mode == "running":
            raise HTTPException(status_code=409, detail="session is in running mode")
        snaps = rt.advance_locked(req.steps)
        rt.push(snaps)
        return {"snapshots": snaps}

    @app.put("/sessions/{session_id}/ylim")
    def set_ylim(session_id: str, req: YlimRequest):
        rt = _get(session_id)
        box = rt.engine.twin.config.ylim_box
        (lo1, hi1), (lo2, hi2) = box
        if not lo1 <= req.y1_lim <= hi1:
            return JSONResponse(status_code=400, content={
                "detail": "y1_lim outside allowed box", "field": "y1_lim",
                "bound": [lo1, hi1], "value": req.y1_lim})
        if not lo2 <= req.y2_lim <= hi2:
            return JSONResponse(status_code=400, content={
                "detail": "y2_lim outside allowed box", "field": "y2_lim",
                "bound": [lo2, hi2], "value": req.y2_lim})
        rt.engine.set_ylim(YLim(y1=req.y1_lim, y2=req.y2_lim))
        return {"accepted": True, "y1_lim": req.y1_lim, "y2_lim": req.y2_lim,
                "applies_at_step": rt.engine.step_index}

    @app.post("/sessions/{session_id}/disturbance")
    def inject(session_id: str, req: DisturbanceRequest):
        rt = _get(session_id)
        onset_step = req.onset_step if req.onset_step is not None else rt.engine.step_index
        d = plant.Disturbance(
            kind=plant.DisturbanceKind(req.kind),
            magnitude=req.magnitude,
            onset=onset_step * plant.CONTROL_DT,
            ramp=req.ramp_steps * plant.CONTROL_DT,
        )
        rt.engine.inject_disturbance(d)
        return {"accepted": True, "kind": req.kind, "magnitude": req.magnitude,
                "onset_step": onset_step, "ramp_steps": req.ramp_steps}

    @app.put("/sessions/{session_id}/mode")
    async def set_mode(session_id: str, req: ModeRequest):
        rt = _get(session_id)
        rt.engine.mode = req.mode
        rt.engine.speed = req.speed
        if req.mode == "running" and (rt.run_task is None or rt.run_task.done()):
            rt.run_task = asyncio.get_running_loop().create_task(_run_loop(rt))
        if req.mode == "step":
            snaps = rt.advance_locked(1)
            rt.push(snaps)
            rt.engine.mode = "paused"
        return {"mode": rt.engine.mode, "speed": req.speed}

    async def _run_loop(rt: SessionRuntime):
        while rt.engine.mode == "running":
            snaps = await asyncio.to_thread(rt.advance_locked, 1)
            rt.push(snaps)
            await asyncio.sleep(1.0 / rt.engine.speed)

    @app.get("/sessions/{session_id}/stream")
    async def stream(session_id: str, request: Request, from_step: int = -1,
                     max_events: int | None = None):
        """SSE snapshot feed; ``from_step`` replays the buffer, ``max_events``
        ends the stream after that many snapshots (finite consumers)."""
        rt = _get(session_id)

        async def gen():
            queue: asyncio.Queue = asyncio.Queue()
            rt.subscribers.append(queue)
            sent = 0
            try:
                if from_step >= 0:
                    for snap in rt.snapshots:
                        if snap["step"] >= from_step:
                            yield _sse_event(snap)
                            sent += 1
                            if max_events is not None and sent >= max_events:
                                return
                while True:
                    if await request.is_disconnected():
                        break
                    try:
                        snap = await asyncio.wait_for(queue.get(), timeout=1.0)
                    except asyncio.TimeoutError:
                        yield ": keepalive\n\n"
                        continue
                    yield _sse_event(snap)
                    sent += 1
                    if max_events is not None and sent >= max_events:
                        return
            finally:
                rt.subscribers.remove(queue)

        return StreamingResponse(gen(), media_type="text/event-stream")

    @app.get("/sessions/{session_id}/export")
    def export(session_id: str):
        rt = _get(session_id)
        buf = io.BytesIO()
        with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
            zf.writestr("truth.csv", _truth_csv(rt))
            zf.writestr("detector.csv", _detector_csv(rt))
            zf.writestr("trajectories.csv", _trajectory_csv(rt))
            zf.writestr("events.jsonl",
                        "".join(json.dumps(e, sort_keys=True) + "\n" for e in rt.engine.events))
        return Response(content=buf.getvalue(), media_type="application/zip",
                        headers={"Content-Disposition":
                                 f'attachment; filename="session_{session_id}.zip"'})

    return app


def _sse_event(snap: dict) -> str:
    return f"event: snapshot\nid: {snap['step']}\ndata: {json.dumps(snap, sort_keys=True)}\n\n"


def _truth_csv(rt: SessionRuntime) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["step", "u1", "u2", "u3", "u1sp", "u2sp", "u3sp", "y1", "y2"])
    for i, row in enumerate(rt.engine.rows):
        w.writerow([i] + [repr(float(v)) for v in row])
    return out.getvalue()


def _detector_csv(rt: SessionRuntime) -> str:
    """ts,cv,M,reject_corr,reject_ks,reject_var,reject_mean,retrain_flag"""
    out = io.StringIO()
    out.write("ts,cv,M,reject_corr,reject_ks,reject_var,reject_mean,retrain_flag\n")
    for snap in rt.snapshots:
        d = snap["detector"]
        if not d.get("active"):
            continue
        ts = int(snap["time_s"])
        for cv in ("y1", "y2"):
            info = d[cv]
            rejects = info["rejects"] or {}
            out.write(
                f"{ts},{cv},{info['m']},{int(rejects.get('corr', False))},"
                f"{int(rejects.get('ks', False))},{int(rejects.get('var', False))},"
                f"{int(rejects.get('mean', False))},{int(info['retrain_flagged'])}\n"
            )
    return out.getvalue()


def _trajectory_csv(rt: SessionRuntime) -> str:
    """step,i,yhat1,yhat2,uhat1..3,usphat1..3,y1_lim,y2_lim"""
    out = io.StringIO()
    out.write("step,i,yhat1,yhat2,uhat1,uhat2,uhat3,usphat1,usphat2,usphat3,y1_lim,y2_lim\n")
    for snap in rt.snapshots:
        tw = snap.get("twin")
        if not tw:
            continue
        lim = snap["ylim"]
        for i, (y, u, usp) in enumerate(zip(tw["y_hat"], tw["u_hat"], tw["usp_hat"])):
            vals = [snap["step"], i, *y, *u, *usp, lim["y1"], lim["y2"]]
            out.write(",".join(str(v) if isinstance(v, int) else repr(float(v)) for v in vals) + "\n")
    return out.getvalue()
