"""Request and response bodies for the annotation service."""

from __future__ import annotations

from typing import Literal, Optional

from pydantic import BaseModel, Field



class ErrorEnvelope(BaseModel):
    error: str
    detail: str


class HealthResponse(BaseModel):
    status: str
    index_generation: int


class HypothesisInfo(BaseModel):
    fact_id: str
    text: str


class SessionCreate(BaseModel):
    hypothesis_id: str


class SessionCreated(BaseModel):
    session: str


class QueryRequest(BaseModel):
    session: str
    node_id: str
    k: int = Field(default=20, ge=1)


class Candidate(BaseModel):
    fact_id: str
    text: str
    score: float


class AnnotateRequest(BaseModel):
    session: str
    query_id: str
    fact_id: str
    verdict: Literal["pos", "neg"]


class FactRequest(BaseModel):
    session: str
    text: str


class FactCreated(BaseModel):
    fact_id: str
    # False when the embedding base is import-only and cannot encode new
    # text; the fact may still be attached to trees, it just never ranks.
    encodable: bool


class AttachRequest(BaseModel):
    session: str
    parent_id: str
    child_id: str


class TreeNodeView(BaseModel):
    fact_id: str
    text: str
    role: str
    children: list["TreeNodeView"] = Field(default_factory=list)


class TreeView(BaseModel):
    session: str
    root: TreeNodeView


class PoolsResponse(BaseModel):
    positives: list[tuple[str, str]]
    negatives: list[tuple[str, str]]
    round: int
    max_depth: int


class TrainRequest(BaseModel):
    """Overrides applied on top of the server's training defaults."""

    loss: Optional[Literal["tml", "scl"]] = None
    margin: Optional[float] = None
    alpha: Optional[float] = None
    temperature: Optional[float] = None
    batch_size: Optional[int] = None
    learning_rate: Optional[float] = None
    epochs: Optional[int] = None
    mode: Optional[Literal["single", "siamese", "dual"]] = None
    seed: Optional[int] = None

    def overrides(self) -> dict:
        return {k: v for k, v in self.model_dump().items() if v is not None}


class TrainStarted(BaseModel):
    run_id: str


class TrainStatus(BaseModel):
    run_id: str
    state: Literal["running", "done", "failed"]
    epoch_losses: list[float] = Field(default_factory=list)
    skipped_triplets: int = 0
    wall_seconds: float = 0.0
    index_generation: Optional[int] = None
    detail: Optional[str] = None


TreeNodeView.model_rebuild()
