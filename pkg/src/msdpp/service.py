"""Stateless HTTP API over a loaded gallery/query snapshot.

The snapshot (gallery, queries, task config, per-query similarity bundles)
is built once at startup and never mutated; every request runs an
independent re-rank with its own parameter overrides, so identical requests
always produce identical responses and concurrent requests match their
serial counterparts.

Errors are machine-readable ``{"code": ..., "message": ...}`` documents:
400 for malformed or invalid parameters (message includes the field path),
404 for unknown query ids, 500 with a diagnostic id for engine failures.
"""

from __future__ import annotations

import logging
import uuid

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .attributes import ImageRecord
from .dataio import Query, TaskConfig
from .errors import ValidationError
from .pipeline import apply_overrides, make_bundle, rerank_document, weight_sweep

log = logging.getLogger("msdpp.service")


class AttributeOverride(BaseModel):
    weight: float | None = None
    direction: int | None = None


class Overrides(BaseModel):
    theta: float | None = None
    k: int | None = None
    tn_mode: str | None = None
    attributes: dict[str, AttributeOverride] | None = None


class RerankRequest(BaseModel):
    query_id: str
    overrides: Overrides | None = None
    include_diagnostics: bool = False


class SweepRequest(BaseModel):
    query_id: str
    attribute: str
    grid: list[float] | None = None
    overrides: Overrides | None = None


def create_app(records: list[ImageRecord], queries: list[Query], task: TaskConfig) -> FastAPI:
    app = FastAPI(title="msdpp", docs_url=None, redoc_url=None)
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )

    records_by_id = {r.id: r for r in records}
    queries_by_id = {q.query_id: q for q in queries}
    bundles = {q.query_id: make_bundle(records, q, task) for q in queries}

    @app.exception_handler(ValidationError)
    async def on_validation(_request: Request, exc: ValidationError):
        return JSONResponse(status_code=400, content={"code": "validation_error", "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def on_bad_body(_request: Request, exc: RequestValidationError):
        first = exc.errors()[0]
        path = ".".join(str(p) for p in first.get("loc", ()))
        return JSONResponse(
            status_code=400,
            content={"code": "invalid_request", "message": f"{path}: {first.get('msg')}"},
        )

    @app.exception_handler(Exception)
    async def on_engine_error(_request: Request, exc: Exception):
        diag = str(uuid.uuid4())
        log.exception("engine error %s", diag)
        return JSONResponse(
            status_code=500,
            content={"code": "engine_error", "message": str(exc), "diagnostic_id": diag},
        )

    def get_query(query_id: str) -> Query:
        q = queries_by_id.get(query_id)
        if q is None:
            raise UnknownQuery(query_id)
        return q

    @app.exception_handler(UnknownQuery)
    async def on_unknown_query(_request: Request, exc: "UnknownQuery"):
        return JSONResponse(
            status_code=404,
            content={"code": "unknown_query", "message": f"unknown query id {exc.query_id!r}"},
        )

    @app.get("/health")
    async def health():
        return {"status": "ok"}

    @app.get("/queries")
    async def list_queries():
        return {"queries": [{"query_id": q.query_id, "text": q.text} for q in queries]}

    @app.get("/gallery/meta")
    async def gallery_meta():
        n_time = sum(1 for r in records if r.time_minutes is not None)
        n_geo = sum(1 for r in records if r.lat_deg is not None)
        return {
            "items": len(records),
            "appearance_dim": int(records[0].appearance.size) if records else 0,
            "with_time": n_time,
            "with_geo": n_geo,
            "queries": len(queries),
            "config": _task_echo(task),
        }

    @app.post("/rerank")
    def rerank(req: RerankRequest):
        query = get_query(req.query_id)
        overrides = req.overrides.model_dump(exclude_none=True) if req.overrides else None
        cfg = apply_overrides(task.rerank, overrides)
        return rerank_document(
            records_by_id, query, bundles[req.query_id], task, "msdpp", cfg,
            include_diagnostics=req.include_diagnostics,
        )

    @app.post("/sweep")
    def sweep(req: SweepRequest):
        query = get_query(req.query_id)
        overrides = req.overrides.model_dump(exclude_none=True) if req.overrides else None
        return weight_sweep(records, [query], task, req.attribute, grid=req.grid, overrides=overrides)

    return app


class UnknownQuery(Exception):
    def __init__(self, query_id: str):
        super().__init__(query_id)
        self.query_id = query_id


def _task_echo(task: TaskConfig) -> dict:
    from .pipeline import config_echo

    echo = config_echo(task.rerank)
    echo["retrieval_metric"] = task.retrieval_metric
    return echo
