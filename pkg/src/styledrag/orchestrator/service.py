"""HTTP JSON API consumed by the browser studio.

All payloads carry a top-level "v" field; errors are rendered as
{code, message, details} with an appropriate status code.
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from ..errors import (IncompleteReviewError, NotFoundError, ParameterError,
                      StyleDragError)
from ..images import decode_png
from .jobs import InputValidationError, JobQueue
from .workspace import Workspace, build_executors

__all__ = ["create_app", "API_VERSION"]

API_VERSION = 1
log = logging.getLogger(__name__)


def _error_response(status: int, code: str, message: str, details=None) -> JSONResponse:
    return JSONResponse(status_code=status,
                        content={"code": code, "message": message,
                                 "details": details if details is not None else {}})


def create_app(workspace: Workspace, queue_width: int = 1,
               static_dir=None) -> FastAPI:
    app = FastAPI(title="styledrag studio service")
    queue = JobQueue(build_executors(workspace), context=workspace,
                     width=queue_width, store_dir=workspace.jobs_dir)
    app.state.workspace = workspace
    app.state.queue = queue

    @app.exception_handler(StyleDragError)
    async def _styledrag_error(request: Request, exc: StyleDragError):
        status = 500
        details = {}
        if isinstance(exc, NotFoundError):
            status = 404
        elif isinstance(exc, InputValidationError):
            status, details = 422, {"fields": exc.details}
        elif isinstance(exc, IncompleteReviewError):
            status, details = 409, {"pending": exc.pending_ids}
        elif isinstance(exc, ValueError):
            status = 400
        return _error_response(status, type(exc).__name__, str(exc), details)

    @app.post("/api/assets")
    async def upload_asset(request: Request):
        body = await request.body()
        decode_png(body)  # reject non-image payloads
        digest = workspace.assets.put(body)
        return {"v": API_VERSION, "hash": digest}

    @app.get("/api/assets/{digest}")
    async def get_asset(digest: str):
        data = workspace.assets.get(digest)
        return Response(content=data, media_type="image/png")

    @app.post("/api/jobs")
    async def submit_job(request: Request):
        payload = await request.json()
        job = queue.submit(payload.get("kind", ""), payload.get("inputs", {}))
        return {"v": API_VERSION, "id": job.id}

    @app.get("/api/jobs/{job_id}")
    async def job_status(job_id: str):
        return {"v": API_VERSION, **queue.status(job_id).to_json()}

    @app.post("/api/jobs/{job_id}/cancel")
    async def cancel_job(job_id: str):
        return {"v": API_VERSION, **queue.cancel(job_id).to_json()}

    @app.get("/api/bootstrap/candidates")
    async def candidates(round: int = 0):
        entries = []
        for entry in workspace.candidates.entries(round):
            item = dict(entry)
            item["x_asset"] = workspace.assets.import_file(
                workspace.candidates.root / entry["files"]["x"])
            item["y_asset"] = workspace.assets.import_file(
                workspace.candidates.root / entry["files"]["y"])
            entries.append(item)
        pending = sum(1 for e in entries if e["verdict"] == "pending")
        return {"v": API_VERSION, "round": round, "candidates": entries,
                "pending": pending}

    @app.post("/api/bootstrap/candidates/{candidate_id}/verdict")
    async def set_verdict(candidate_id: str, request: Request):
        payload = await request.json()
        entry = workspace.candidates.set_verdict(candidate_id, payload.get("verdict", ""),
                                                 actor=payload.get("actor", "studio"))
        return {"v": API_VERSION, **entry}

    @app.post("/api/bootstrap/retrain")
    async def retrain(request: Request):
        payload = await request.json()
        round_index = int(payload.get("round", 0))
        pending = [e["id"] for e in workspace.candidates.entries(round_index)
                   if e["verdict"] == "pending"]
        if pending:
            raise IncompleteReviewError(pending)
        inputs = {"policy": payload.get("policy", {"kind": "human"}),
                  "round": round_index, "use_store": True,
                  "adapt": payload.get("adapt", {})}
        job = queue.submit("bootstrap_round", inputs)
        return {"v": API_VERSION, "id": job.id}

    @app.get("/api/models")
    async def models():
        return {"v": API_VERSION, "models": workspace.hub.list_models()}

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="studio")

    return app
