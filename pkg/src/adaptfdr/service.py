"""Interactive session server.

Exposes exactly the analyst-visible filtration over HTTP + WebSocket:
masked records (covariates and the folded p-value only), tail counts,
the FDP-estimate history, and the current model summary.  The hidden
side of each masked pair never leaves the process; all steering actions
are executed server-side against the visible state, so any client-driven
analysis is measurable with respect to the protocol filtration by
construction.

Sessions live in memory, process actions strictly serially under a
per-session lock, and optionally persist (payload + action log) to one
JSON file each, from which a session can be replayed deterministically.
"""

import json
import queue
import secrets
import threading
from pathlib import Path
from typing import List, Optional

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from pydantic import BaseModel, Field

from .core import ingest
from .engine import AdaptConfig, AdaptEngine, q_values
from .glm import Featurization

SCHEMA_VERSION = 1
MAX_HYPOTHESES = 1_000_000
DELTA_THRESHOLD = 100_000


class SessionConfig(BaseModel):
    family: str = "beta_mixture"
    featurization: str = "auto"
    selection: str = "bic"
    s0: float = 0.45
    refit_every: Optional[int] = None
    fitter: str = "glm"
    strategy: str = "lfdr"
    em_iterations: int = 10
    em_tolerance: float = 1e-6
    seed: int = 0


class CreateSessionRequest(BaseModel):
    schema_version: int = Field(default=SCHEMA_VERSION, alias="schema")
    pvalues: List[float]
    covariates: List[List[float]]
    config: SessionConfig = SessionConfig()

    model_config = {"populate_by_name": True}


class ActionRequest(BaseModel):
    schema_version: int = Field(default=SCHEMA_VERSION, alias="schema")
    type: str
    k: int = 1
    alpha: Optional[float] = None
    name: Optional[str] = None
    candidates: Optional[str] = None

    model_config = {"populate_by_name": True}


class FinalizeRequest(BaseModel):
    schema_version: int = Field(default=SCHEMA_VERSION, alias="schema")
    alpha: float

    model_config = {"populate_by_name": True}


def _featurization_from_string(spec: str):
    if spec == "auto":
        return "auto"
    if spec == "identity":
        return [(Featurization("identity"), Featurization("identity"))]
    if spec.startswith("spline:"):
        ks = [int(k) for k in spec.split(":", 1)[1].split(",")]
        return [(Featurization("spline", knots=k), Featurization("spline", knots=k))
                for k in ks]
    if spec.startswith("subset:"):
        idx = tuple(int(i) for i in spec.split(":", 1)[1].split(","))
        return [(Featurization("subset", indices=idx),
                 Featurization("subset", indices=idx))]
    raise ValueError(f"unknown featurization spec {spec!r}")


class Session:
    def __init__(self, session_id: str, payload: CreateSessionRequest,
                 persist_dir: Optional[Path]):
        self.id = session_id
        self.payload = payload
        self.lock = threading.Lock()
        self.lifecycle = "active"
        self.action_log: list = []
        self.subscribers: list = []
        self.final_result: Optional[dict] = None
        self.persist_path = (persist_dir / f"{session_id}.json"
                             if persist_dir else None)
        cfg = payload.config
        h = ingest(payload.pvalues, payload.covariates)
        if h.n > MAX_HYPOTHESES:
            raise ValueError(f"payload exceeds {MAX_HYPOTHESES} hypotheses")
        self.h = h
        self.engine = AdaptEngine(h, AdaptConfig(
            family=cfg.family,
            featurization=_featurization_from_string(cfg.featurization),
            selection=cfg.selection,
            s0=cfg.s0,
            refit_every="auto" if cfg.refit_every is None else cfg.refit_every,
            alpha=None,
            em_iterations=cfg.em_iterations,
            em_tolerance=cfg.em_tolerance,
            fitter=cfg.fitter,
            strategy=cfg.strategy,
            seed=cfg.seed,
        ))

    # -- snapshots ---------------------------------------------------------

    def snapshot(self) -> dict:
        view = self.engine.public_view()
        view["session_id"] = self.id
        view["lifecycle"] = self.lifecycle
        return view

    def _emit(self, prev_visible: Optional[np.ndarray]):
        snap = self.snapshot()
        if self.h.n > DELTA_THRESHOLD and prev_visible is not None:
            changed = np.flatnonzero(prev_visible != self.engine.mask.revealed)
            snap = {k: v for k, v in snap.items() if k != "hypotheses"}
            snap["changed"] = [
                {"i": int(i),
                 "value": float(self.engine.mask.visible[i]),
                 "masked": bool(self.engine.mask.masked[i])}
                for i in changed
            ]
        for q in list(self.subscribers):
            q.put(snap)

    # -- actions -----------------------------------------------------------

    def apply(self, action: ActionRequest) -> dict:
        with self.lock:
            if self.lifecycle != "active":
                raise HTTPException(status_code=409,
                                    detail="session already finalized")
            prev_revealed = self.engine.mask.revealed
            handler = {
                "step": self._act_step,
                "run_until": self._act_run_until,
                "refit": self._act_refit,
                "set_family": self._act_set_family,
                "set_featurization": self._act_set_featurization,
                "finalize": self._act_finalize,
            }.get(action.type)
            if handler is None:
                raise HTTPException(status_code=422,
                                    detail=f"unknown action type {action.type!r}")
            handler(action)
            self.action_log.append(action.model_dump(by_alias=True))
            self._emit(prev_revealed)
            self._persist()
            return self.snapshot()

    def _act_step(self, action: ActionRequest):
        self.engine.step(max(int(action.k), 1))

    def _act_run_until(self, action: ActionRequest):
        if action.alpha is None:
            raise HTTPException(status_code=422, detail="run_until needs alpha")
        self.engine.run_until(action.alpha)

    def _act_refit(self, action: ActionRequest):
        try:
            self.engine.refit_now()
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    def _act_set_family(self, action: ActionRequest):
        if action.name is None:
            raise HTTPException(status_code=422, detail="set_family needs name")
        try:
            self.engine.set_family(action.name)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    def _act_set_featurization(self, action: ActionRequest):
        if action.candidates is None:
            raise HTTPException(status_code=422,
                                detail="set_featurization needs candidates")
        try:
            spec = _featurization_from_string(action.candidates)
            self.engine.set_featurization(spec)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))

    def _act_finalize(self, action: ActionRequest):
        if action.alpha is None:
            raise HTTPException(status_code=422, detail="finalize needs alpha")
        self._finalize(action.alpha)

    def _finalize(self, alpha: float):
        engine = self.engine
        reached = engine.run_until(alpha)
        rejections = engine.rejections_now() if reached else np.empty(0, dtype=int)
        engine.run_full()  # reveal the rest so q-values are defined
        trace = engine.build_trace()
        qvals = q_values(trace, self.h.pvalues)
        self.lifecycle = "finalized"
        self.final_result = {
            "schema": SCHEMA_VERSION,
            "alpha": alpha,
            "reached": bool(reached),
            "rejections": [int(i) for i in rejections],
            "qvalues": [float(v) for v in qvals],
            "final_alpha_reached": trace.final_alpha_reached,
        }

    # -- persistence ---------------------------------------------------------

    def _persist(self):
        if self.persist_path is None:
            return
        record = {
            "schema": SCHEMA_VERSION,
            "session_id": self.id,
            "payload": self.payload.model_dump(by_alias=True),
            "action_log": self.action_log,
            "lifecycle": self.lifecycle,
        }
        tmp = self.persist_path.with_suffix(".tmp")
        tmp.write_text(json.dumps(record, sort_keys=True))
        tmp.replace(self.persist_path)

    @classmethod
    def replay(cls, record: dict, persist_dir: Optional[Path]) -> "Session":
        payload = CreateSessionRequest.model_validate(record["payload"])
        session = cls(record["session_id"], payload, persist_dir)
        for raw in record["action_log"]:
            session.apply(ActionRequest.model_validate(raw))
        return session


def create_app(persist_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="adaptive thresholding sessions")
    sessions: dict = {}
    persist_path = Path(persist_dir) if persist_dir else None
    if persist_path:
        persist_path.mkdir(parents=True, exist_ok=True)

    def get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None and persist_path is not None:
            record_file = persist_path / f"{session_id}.json"
            if record_file.exists():
                record = json.loads(record_file.read_text())
                session = Session.replay(record, persist_path)
                sessions[session_id] = session
        if session is None:
            raise HTTPException(status_code=404, detail="unknown session")
        return session

    @app.post("/sessions")
    def create_session(payload: CreateSessionRequest):
        if not payload.pvalues:
            raise HTTPException(status_code=422, detail="pvalues must be non-empty")
        session_id = secrets.token_hex(8)
        try:
            session = Session(session_id, payload, persist_path)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        sessions[session_id] = session
        session._persist()
        return {"schema": SCHEMA_VERSION, "session_id": session_id,
                "snapshot": session.snapshot()}

    @app.get("/sessions/{session_id}/state")
    def get_state(session_id: str):
        return get_session(session_id).snapshot()

    @app.get("/sessions/{session_id}/log")
    def get_log(session_id: str):
        session = get_session(session_id)
        return {"schema": SCHEMA_VERSION, "session_id": session_id,
                "action_log": session.action_log,
                "lifecycle": session.lifecycle}

    @app.get("/sessions/{session_id}/result")
    def get_result(session_id: str):
        session = get_session(session_id)
        if session.final_result is None:
            raise HTTPException(status_code=409, detail="session not finalized")
        return session.final_result

    @app.post("/sessions/{session_id}/actions")
    def post_action(session_id: str, action: ActionRequest):
        session = get_session(session_id)
        snapshot = session.apply(action)
        response = {"schema": SCHEMA_VERSION, "snapshot": snapshot}
        if action.type == "finalize":
            response["result"] = session.final_result
        return response

    @app.post("/sessions/{session_id}/finalize")
    def post_finalize(session_id: str, body: FinalizeRequest):
        session = get_session(session_id)
        session.apply(ActionRequest(type="finalize", alpha=body.alpha))
        return session.final_result

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(websocket: WebSocket, session_id: str):
        import asyncio

        session = sessions.get(session_id)
        if session is None:
            await websocket.close(code=4404)
            return
        await websocket.accept()
        q: queue.Queue = queue.Queue()
        session.subscribers.append(q)
        loop = asyncio.get_event_loop()
        try:
            while True:
                try:
                    snap = await loop.run_in_executor(
                        None, lambda: q.get(timeout=0.5))
                except queue.Empty:
                    # heartbeat poll also notices client disconnects
                    try:
                        await asyncio.wait_for(websocket.receive_text(),
                                               timeout=0.001)
                    except asyncio.TimeoutError:
                        continue
                    except WebSocketDisconnect:
                        break
                    continue
                await websocket.send_json(snap)
        except (WebSocketDisconnect, RuntimeError):
            pass
        finally:
            if q in session.subscribers:
                session.subscribers.remove(q)

    return app
