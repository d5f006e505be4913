"""HTTP API over a file store.

All error responses carry ``{"code": ..., "message": ...}``. Annotation
bodies are served as the exact bytes that were stored, so repeated fetches
are byte-identical. When an API token is configured, every route requires
``Authorization: Bearer <token>``.
"""

from __future__ import annotations

import json
import os
from typing import Any, Mapping

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .graph import graph_to_doc, ledger_to_docs
from .markers import annotation_from_doc, taxonomy_doc
from .store import (
    ENV_STORE_ROOT,
    FileStore,
    IncompleteSubmission,
    NotFound,
    RevisionConflict,
    StoreError,
    motif_hits_to_doc,
)

ENV_API_TOKEN = "EPITRACE_API_TOKEN"
ENV_BIND = "EPITRACE_BIND"

_TRACE_FILTERS = ("model", "environment", "scaffold", "task_id", "scope", "trial")

_STORE_STATUS = {
    NotFound: 404,
    RevisionConflict: 409,
    IncompleteSubmission: 422,
}


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


async def _read_json_object(request: Request) -> dict:
    try:
        body = json.loads(await request.body())
    except json.JSONDecodeError as exc:
        raise ApiError(400, "invalid", f"request body is not JSON: {exc}")
    if not isinstance(body, dict):
        raise ApiError(400, "invalid", "request body must be a JSON object")
    return body


def create_app(store: FileStore, *, api_token: str | None = None) -> FastAPI:
    app = FastAPI(title="epitrace", docs_url=None, redoc_url=None)

    @app.middleware("http")
    async def check_auth(request: Request, call_next):
        if api_token is not None:
            supplied = request.headers.get("authorization", "")
            if supplied != f"Bearer {api_token}":
                return _error(401, "unauthorized", "missing or wrong bearer token")
        return await call_next(request)

    @app.exception_handler(ApiError)
    async def handle_api_error(request: Request, exc: ApiError):
        return _error(exc.status, exc.code, exc.message)

    @app.exception_handler(StoreError)
    async def handle_store_error(request: Request, exc: StoreError):
        return _error(_STORE_STATUS.get(type(exc), 500), exc.code, str(exc))

    @app.exception_handler(ValueError)
    async def handle_value_error(request: Request, exc: ValueError):
        return _error(400, "invalid", str(exc))

    @app.exception_handler(RequestValidationError)
    async def handle_request_validation(request: Request, exc: RequestValidationError):
        return _error(400, "invalid", str(exc))

    @app.get("/traces")
    def list_traces(request: Request) -> dict:
        filters: dict[str, Any] = {}
        for key, value in request.query_params.items():
            if key not in _TRACE_FILTERS:
                raise ApiError(400, "invalid", f"unknown filter {key!r}")
            filters[key] = value
        return {"traces": store.list_traces(**filters)}

    @app.get("/traces/{trace_id}")
    def get_trace(trace_id: str) -> dict:
        return store.trace_document(trace_id)

    @app.get("/traces/{trace_id}/graph")
    def get_graph(trace_id: str) -> dict:
        graph, ledger = store.get_graph(trace_id)
        doc = graph_to_doc(graph)
        doc["warnings"] = ledger_to_docs(ledger)
        return doc

    @app.get("/traces/{trace_id}/motifs")
    def get_motifs(trace_id: str) -> dict:
        return motif_hits_to_doc(trace_id, store.get_motifs(trace_id))

    @app.get("/markers")
    def get_markers() -> dict:
        return taxonomy_doc()

    @app.get("/annotations/{trace_id}/{annotator_id}")
    def get_annotation(trace_id: str, annotator_id: str) -> Response:
        return Response(
            content=store.annotation_bytes(trace_id, annotator_id),
            media_type="application/json",
        )

    @app.put("/annotations/{trace_id}/{annotator_id}")
    async def put_annotation(trace_id: str, annotator_id: str, request: Request) -> dict:
        body = await _read_json_object(request)
        expected_revision = body.pop("expected_revision", None)
        if expected_revision is not None and not isinstance(expected_revision, int):
            raise ApiError(400, "invalid", "expected_revision must be an integer")
        body.pop("revision", None)
        body.setdefault("trace_id", trace_id)
        body.setdefault("annotator_id", annotator_id)
        if body["trace_id"] != trace_id or body["annotator_id"] != annotator_id:
            raise ApiError(400, "invalid", "annotation ids must match the URL")
        annotation = annotation_from_doc(body)
        revision = store.put_annotation(annotation, expected_revision=expected_revision)
        return {"revision": revision}

    @app.post("/annotations/{trace_id}/{annotator_id}/submit")
    def submit_annotation(trace_id: str, annotator_id: str) -> dict:
        return {"revision": store.submit_annotation(trace_id, annotator_id)}

    return app


def app_from_env(env: Mapping[str, str] | None = None) -> FastAPI:
    env = os.environ if env is None else env
    root = env.get(ENV_STORE_ROOT)
    if not root:
        raise ValueError(f"{ENV_STORE_ROOT} must point at the store root")
    return create_app(FileStore(root), api_token=env.get(ENV_API_TOKEN))


def serve(store_root: str, host: str = "127.0.0.1", port: int = 8321,
          api_token: str | None = None) -> None:
    import uvicorn

    uvicorn.run(create_app(FileStore(store_root), api_token=api_token),
                host=host, port=port)
