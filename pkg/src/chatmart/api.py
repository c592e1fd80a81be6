"""HTTP service: session ingestion, ETL control, schema inspection, OLAP
queries, and the dashboard's static assets, all in one process.

The HTTP layer adds no semantics of its own: every endpoint response is
the result of the corresponding module call, so the CLI and the API
always agree. Responses that read the schema carry snapshot provenance
so clients can show data freshness.
"""

from __future__ import annotations

import json
import logging
import threading
from contextlib import asynccontextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from fastapi import Depends, FastAPI, HTTPException, Query, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import conversation
from .conversation import ConversationScript, EngineConfig, SessionEndedError, SessionState
from .docstore import DocumentStore
from .etl import ConcurrentRunError, EtlPipeline, EtlScheduler
from .lexicon import Lexicon, load_lexicon_file
from .matching import UtteranceTooLongError
from .olap import (
    DEFAULT_FRESHNESS_SECONDS,
    GRANULARITIES,
    OlapEngine,
    OlapQuery,
    QueryError,
    SnapshotUnavailableError,
)
from .warehouse import SchemaManifest, load_manifest_file

logger = logging.getLogger(__name__)


@dataclass
class ApiConfig:
    lexicon_path: str
    script_path: str
    manifest_path: str
    data_dir: str  # holds the document store, ETL state, and snapshot
    host: str = "127.0.0.1"
    port: int = 8000
    freshness_seconds: float = DEFAULT_FRESHNESS_SECONDS
    cors_origins: list[str] = field(default_factory=list)
    api_token: str | None = None
    etl_interval_seconds: float | None = None
    dashboard_dir: str | None = None
    max_reprompts: int = 2

    @classmethod
    def from_file(cls, path: str | Path) -> "ApiConfig":
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
        return cls(**data)

    @property
    def store_dir(self) -> Path:
        return Path(self.data_dir) / "store"

    @property
    def snapshot_path(self) -> Path:
        return Path(self.data_dir) / "schema.snapshot"

    @property
    def etl_state_dir(self) -> Path:
        return Path(self.data_dir) / "etl"


class AdvanceRequest(BaseModel):
    session_id: str
    utterance: str


class EtlRunRequest(BaseModel):
    mode: str = "incremental"


class AppState:
    """Everything the endpoints share; built once at startup so a broken
    config fails fast instead of failing the first request."""

    def __init__(self, config: ApiConfig):
        self.config = config
        self.lexicon: Lexicon = load_lexicon_file(config.lexicon_path)
        self.script: ConversationScript = conversation.load_script_file(
            config.script_path, self.lexicon
        )
        self.manifest: SchemaManifest = load_manifest_file(config.manifest_path)
        self.store = DocumentStore(config.store_dir)
        self.pipeline = EtlPipeline(
            self.store, self.manifest, config.etl_state_dir, config.snapshot_path
        )
        self.engine = OlapEngine(config.snapshot_path, config.freshness_seconds)
        self.engine_config = EngineConfig(max_reprompts=config.max_reprompts)
        self.sessions: dict[str, SessionState] = {}
        self.sessions_lock = threading.Lock()
        self.scheduler: EtlScheduler | None = None
        if config.etl_interval_seconds:
            self.scheduler = EtlScheduler(self.pipeline, config.etl_interval_seconds)


def create_app(config: ApiConfig) -> FastAPI:
    state = AppState(config)

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        if state.scheduler:
            state.scheduler.start()
        yield
        if state.scheduler:
            state.scheduler.stop()

    app = FastAPI(title="chatmart", lifespan=lifespan)
    app.state.chatmart = state

    if config.cors_origins:
        app.add_middleware(
            CORSMiddleware,
            allow_origins=config.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def require_token(request: Request) -> None:
        if config.api_token and request.headers.get("x-api-token") != config.api_token:
            raise HTTPException(status_code=401, detail="missing or bad API token")

    guarded = [Depends(require_token)]

    @app.get("/healthz")
    def healthz() -> dict:
        return {"status": "ok"}

    # -- conversation sessions -------------------------------------------

    @app.post("/sessions/start", dependencies=guarded)
    def start_session() -> dict:
        session_state, prompt = conversation.start_session(
            state.script, state.lexicon, state.engine_config
        )
        with state.sessions_lock:
            state.sessions[session_state.session_id] = session_state
        return {"session_id": session_state.session_id, "prompt": prompt, "ended": False}

    @app.post("/sessions/advance", dependencies=guarded)
    def advance_session(body: AdvanceRequest) -> dict:
        with state.sessions_lock:
            session_state = state.sessions.get(body.session_id)
        if session_state is None:
            raise HTTPException(status_code=404, detail=f"unknown session {body.session_id}")
        with state.sessions_lock:
            try:
                result = conversation.advance(session_state, body.utterance)
            except SessionEndedError:
                raise HTTPException(
                    status_code=409, detail=f"session {body.session_id} already ended"
                ) from None
            except UtteranceTooLongError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from None
        response: dict[str, Any] = {
            "session_id": body.session_id,
            "prompt": result.prompt,
            "ended": result.ended,
            "reprompted": result.reprompted,
        }
        if result.ended:
            document = dict(conversation.finish_session(session_state))
            document["session_id"] = session_state.session_id
            stored_id = state.store.put_document(document)
            response["document"] = state.store.get_document(stored_id)
        return response

    # -- ETL ---------------------------------------------------------------

    @app.post("/etl/run", dependencies=guarded)
    def etl_run(body: EtlRunRequest | None = None) -> dict:
        mode = body.mode if body else "incremental"
        try:
            run = state.pipeline.run(mode)
        except ConcurrentRunError as exc:
            raise HTTPException(status_code=409, detail=str(exc)) from None
        if run.status != "succeeded":
            raise HTTPException(status_code=500, detail=run.to_dict())
        return run.to_dict()

    @app.get("/etl/status", dependencies=guarded)
    def etl_status(limit: int | None = None) -> dict:
        return {"runs": state.pipeline.status(limit), "watermark": state.pipeline.watermark()}

    # -- OLAP ----------------------------------------------------------------

    @app.get("/olap/query", dependencies=guarded)
    def olap_query(
        target: str,
        group_by: str | None = None,
        level: str | None = None,
        filter: list[str] = Query(default=[]),
    ) -> dict:
        if level is not None:
            if level not in GRANULARITIES:
                raise HTTPException(
                    status_code=400,
                    detail=f"unknown level {level!r}; expected one of {sorted(GRANULARITIES)}",
                )
            groups = GRANULARITIES[level]
        else:
            groups = tuple(g for g in (group_by or "").split(",") if g)
        filters = []
        for item in filter:
            name, sep, value = item.partition(":")
            if not sep:
                raise HTTPException(
                    status_code=400, detail=f"filter {item!r} must look like column:value"
                )
            filters.append((name, value))
        query = OlapQuery(target=target, group_by=groups, filters=tuple(filters))
        try:
            cube = state.engine.query(query)
            chart = state.engine.chart_spec(query, cube)
        except QueryError as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from None
        except SnapshotUnavailableError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from None
        return {
            "query": {
                "target": target,
                "group_by": list(groups),
                "filters": [list(f) for f in filters],
            },
            "cube": cube.to_json(),
            "chart": chart.to_json(),
            "provenance": cube.provenance,
        }

    @app.get("/manifest", dependencies=guarded)
    def manifest_info() -> dict:
        try:
            return state.engine.manifest_info()
        except SnapshotUnavailableError:
            # No schema built yet: answer from the manifest alone so the
            # dashboard can render its dropdowns against an empty store.
            grouped = {col for mv in state.manifest.multi_value for _, col in mv.members}
            questions = [
                {
                    "name": mv.field,
                    "kind": "group",
                    "display": mv.display,
                    "members": [
                        {
                            "value": value,
                            "column": col,
                            "display": state.manifest.dimension(mv.table).column(col).display,
                        }
                        for value, col in mv.members
                    ],
                }
                for mv in state.manifest.multi_value
            ]
            for dim in state.manifest.dimensions:
                for c in dim.columns:
                    if c.kind == "enum" and c.name not in grouped:
                        questions.append(
                            {"name": c.name, "kind": "single", "display": c.display}
                        )
            return {
                "questions": questions,
                "demographics": {demo: [] for demo in state.manifest.demographics},
                "response_categories": ["yes", "no", "don't know", "unknown"],
                "provenance": {"snapshot_id": None, "built_at": None, "stale": True},
            }

    dashboard = config.dashboard_dir
    if dashboard and Path(dashboard).is_dir():
        app.mount("/", StaticFiles(directory=dashboard, html=True), name="dashboard")

    return app


def serve(config: ApiConfig) -> None:
    import uvicorn

    uvicorn.run(create_app(config), host=config.host, port=config.port, log_level="info")
