"""HTTP surface of the listening-test service."""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .service import (
    DuplicateSubmitError,
    InvalidRatingError,
    ListenService,
    UnknownSessionError,
    WrongItemError,
)


class CreateSessionRequest(BaseModel):
    listener_id: str
    seed: int | None = None


class SubmitRatingRequest(BaseModel):
    item_id: int
    value: int | str
    idempotency_key: str | None = None


def create_app(service: ListenService, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="listening-test service")
    # the UI may be hosted separately from the API during development
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.post("/api/sessions")
    def create_session(request: CreateSessionRequest):
        return service.create_session(request.listener_id, request.seed)

    @app.get("/api/sessions/{session_id}")
    def session_view(session_id: str):
        try:
            return service.session_view(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.get("/api/sessions/{session_id}/next")
    def next_item(session_id: str):
        try:
            return service.next_item(session_id)
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    @app.post("/api/sessions/{session_id}/ratings")
    def submit_rating(session_id: str, request: SubmitRatingRequest):
        try:
            return service.submit_rating(
                session_id,
                request.item_id,
                request.value,
                idempotency_key=request.idempotency_key,
            )
        except UnknownSessionError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except (WrongItemError, DuplicateSubmitError) as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from exc
        except InvalidRatingError as exc:
            raise HTTPException(status_code=422, detail=str(exc)) from exc

    @app.get("/api/export")
    def export(scenario: str | None = None, kind: str | None = None):
        return {"records": service.export_results(scenario=scenario, kind=kind)}

    @app.get("/audio/{ref}")
    def audio(ref: str):
        try:
            return FileResponse(service.audio_path(ref), media_type="audio/wav")
        except FileNotFoundError as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc

    if ui_dir is not None and Path(ui_dir).exists():
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
