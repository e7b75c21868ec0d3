"""HTTP service exposing sessions, memos and turn traces.

Endpoints:
    POST   /sessions                    -> {"id": ...}
    POST   /sessions/{id}/messages      {"text": ...} -> {"reply", "trace"}
    GET    /sessions/{id}/memo          -> [{"topic", "summary"?, "start", "end"}, ...]
    GET    /sessions/{id}/trace         -> last turn trace (null before the first turn)
    DELETE /sessions/{id}
    GET    /healthz

Per-session requests are serialized: a second message while one is in flight
gets 409. Every turn (including a failed one, which keeps the appended user
line) is snapshotted atomically, so a restarted service replays the next
turn with byte-identical prompts.
"""

from __future__ import annotations

import logging
import threading

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .config import EngineConfig
from .pipeline import PromptBudgetError, TurnFailure, handle_user_message, new_session
from .storage import delete_snapshot, load_snapshot, save_snapshot, snapshot_path

logger = logging.getLogger(__name__)


class SessionCreated(BaseModel):
    id: str


class MessageIn(BaseModel):
    text: str


class MessageOut(BaseModel):
    reply: str
    trace: dict


class Health(BaseModel):
    ok: bool


def create_app(config: EngineConfig) -> FastAPI:
    config.validate()
    app = FastAPI(title="memoloop", version="0.1.0")
    backend = config.build_chat_backend()

    sessions: dict = {}
    traces: dict = {}
    locks: dict[str, threading.Lock] = {}
    registry_lock = threading.Lock()
    app.state.sessions = sessions
    app.state.traces = traces
    app.state.locks = locks

    def get_session(session_id: str):
        with registry_lock:
            if session_id in sessions:
                return sessions[session_id]
        if snapshot_path(config.storage_path, session_id).exists():
            session, trace = load_snapshot(config.storage_path, session_id)
            with registry_lock:
                sessions.setdefault(session_id, session)
                if trace is not None:
                    traces.setdefault(session_id, trace)
                locks.setdefault(session_id, threading.Lock())
                return sessions[session_id]
        raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    @app.get("/healthz", response_model=Health)
    def healthz():
        return Health(ok=True)

    @app.post("/sessions", response_model=SessionCreated, status_code=201)
    def create_session():
        session = new_session(config=config.pipeline)
        with registry_lock:
            sessions[session.id] = session
            locks[session.id] = threading.Lock()
        save_snapshot(session, config.storage_path)
        return SessionCreated(id=session.id)

    @app.post("/sessions/{session_id}/messages", response_model=MessageOut)
    def post_message(session_id: str, message: MessageIn):
        if not message.text.strip():
            raise HTTPException(status_code=422, detail="text must be non-empty")
        session = get_session(session_id)
        lock = locks.get(session_id)
        if lock is None:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")
        if not lock.acquire(blocking=False):
            raise HTTPException(
                status_code=409, detail=f"session {session_id} has a message in flight"
            )
        try:
            try:
                updated, reply, trace = handle_user_message(session, message.text, backend)
            except PromptBudgetError as exc:
                raise HTTPException(status_code=422, detail=str(exc)) from exc
            except TurnFailure as failure:
                with registry_lock:
                    sessions[session_id] = failure.session
                save_snapshot(failure.session, config.storage_path, traces.get(session_id))
                logger.error("turn failed for %s: %s", session_id, failure)
                raise HTTPException(
                    status_code=502,
                    detail={"stage": failure.stage, "error": str(failure.cause)},
                ) from failure
            trace_obj = trace.to_obj()
            with registry_lock:
                sessions[session_id] = updated
                traces[session_id] = trace_obj
            save_snapshot(updated, config.storage_path, trace_obj)
            return MessageOut(reply=reply, trace=trace_obj)
        finally:
            lock.release()

    @app.get("/sessions/{session_id}/memo")
    def get_memo(session_id: str) -> list[dict]:
        return get_session(session_id).memo.to_obj()

    @app.get("/sessions/{session_id}/trace")
    def get_trace(session_id: str) -> dict | None:
        get_session(session_id)
        return traces.get(session_id)

    @app.delete("/sessions/{session_id}", status_code=204)
    def delete_session(session_id: str):
        found_disk = delete_snapshot(config.storage_path, session_id)
        with registry_lock:
            found_memory = sessions.pop(session_id, None) is not None
            traces.pop(session_id, None)
            locks.pop(session_id, None)
        if not (found_disk or found_memory):
            raise HTTPException(status_code=404, detail=f"unknown session {session_id}")

    return app
