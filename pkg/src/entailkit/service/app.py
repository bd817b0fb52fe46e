"""HTTP JSON API for interactive entailment-tree construction."""

from __future__ import annotations

import json

from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from ..corpus import Corpus, IntegrityError, TreeNode
from .schemas import (
    AnnotateRequest,
    AttachRequest,
    Candidate,
    FactCreated,
    FactRequest,
    HealthResponse,
    HypothesisInfo,
    PoolsResponse,
    QueryRequest,
    SessionCreate,
    SessionCreated,
    TrainRequest,
    TrainStarted,
    TrainStatus,
    TreeNodeView,
    TreeView,
)
from .state import AppState, BusyError, ServeConfig, state_from_config


def _envelope(status: int, error: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": error, "detail": detail})


def _node_view(node: TreeNode, corpus: Corpus) -> TreeNodeView:
    return TreeNodeView(
        fact_id=node.fact_id,
        text=corpus.get(node.fact_id).text,
        role=node.role,
        children=[_node_view(c, corpus) for c in node.children],
    )


def create_app(state: AppState) -> FastAPI:
    app = FastAPI(title="entailkit annotation service")
    app.state.entailkit = state

    @app.exception_handler(KeyError)
    async def _missing(request: Request, exc: KeyError):
        return _envelope(404, "not_found", str(exc).strip('"'))

    @app.exception_handler(IntegrityError)
    async def _conflict(request: Request, exc: IntegrityError):
        return _envelope(409, "conflict", str(exc))

    @app.exception_handler(BusyError)
    async def _busy(request: Request, exc: BusyError):
        return _envelope(409, "busy", str(exc))

    @app.exception_handler(LookupError)
    async def _lookup(request: Request, exc: LookupError):
        return _envelope(404, "not_found", str(exc))

    @app.exception_handler(ValueError)
    async def _invalid(request: Request, exc: ValueError):
        return _envelope(400, "invalid", str(exc))

    @app.exception_handler(RequestValidationError)
    async def _validation(request: Request, exc: RequestValidationError):
        return _envelope(422, "validation", json.dumps(exc.errors(), default=str))

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", index_generation=state.index_generation)

    @app.get("/hypotheses", response_model=list[HypothesisInfo])
    def hypotheses() -> list[HypothesisInfo]:
        return [HypothesisInfo(fact_id=fid, text=text) for fid, text in state.hypotheses()]

    @app.post("/session", response_model=SessionCreated)
    def create_session(body: SessionCreate) -> SessionCreated:
        return SessionCreated(session=state.create_session(body.hypothesis_id))

    @app.get("/tree/{session_id}", response_model=TreeView)
    def tree(session_id: str) -> TreeView:
        built = state.tree(session_id)
        return TreeView(session=session_id, root=_node_view(built.root, state.corpus))

    @app.post("/query", response_model=list[Candidate])
    def query(body: QueryRequest) -> list[Candidate]:
        ranked = state.query(body.session, body.node_id, body.k)
        return [
            Candidate(fact_id=fid, text=state.corpus.get(fid).text, score=score)
            for fid, score in ranked
        ]

    @app.post("/annotate", status_code=204)
    def annotate(body: AnnotateRequest) -> Response:
        state.annotate(body.session, body.query_id, body.fact_id, body.verdict)
        return Response(status_code=204)

    @app.post("/fact", response_model=FactCreated)
    def add_fact(body: FactRequest) -> FactCreated:
        fact_id, encodable = state.add_fact(body.session, body.text)
        return FactCreated(fact_id=fact_id, encodable=encodable)

    @app.post("/attach", status_code=204)
    def attach(body: AttachRequest) -> Response:
        state.attach(body.session, body.parent_id, body.child_id)
        return Response(status_code=204)

    @app.get("/pools", response_model=PoolsResponse)
    def pools() -> PoolsResponse:
        snapshot = state.pools()
        return PoolsResponse(
            positives=sorted(snapshot.positives),
            negatives=sorted(snapshot.negatives),
            round=snapshot.round,
            max_depth=snapshot.max_depth,
        )

    @app.get("/metrics")
    def metrics() -> dict:
        return state.metrics().to_dict()

    @app.post("/train", response_model=TrainStarted)
    def train(body: TrainRequest) -> TrainStarted:
        return TrainStarted(run_id=state.start_training(body.overrides()))

    @app.get("/train/{run_id}", response_model=TrainStatus)
    def train_status(run_id: str) -> TrainStatus:
        job = state.job_status(run_id)
        return TrainStatus(
            run_id=job.run_id,
            state=job.state,
            epoch_losses=list(job.epoch_losses),
            skipped_triplets=job.skipped_triplets,
            wall_seconds=job.wall_seconds,
            index_generation=job.index_generation,
            detail=job.detail,
        )

    return app


def serve(config: ServeConfig) -> None:
    """Load data per the config and block serving HTTP."""
    import uvicorn

    app = create_app(state_from_config(config))
    uvicorn.run(app, host=config.host, port=config.port, log_level="warning")
