"""Server-side state: corpus, live encoder stack, sessions, and durable logs.

Every mutation is appended to a log and fsynced before it is acknowledged,
so replaying the two logs after a crash reconstructs the exact same pools
and session trees. Reads take an atomic snapshot of the live (stack, index)
pair; a background training job swaps that pair in one step when it
finishes, never midway.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

from ..corpus import (
    Corpus,
    EntailmentTree,
    ParseError,
    TripletRecord,
    TripletStore,
    build_tree,
    ingest_trees,
    read_corpus,
)
from ..encoder import (
    EncoderStack,
    MatrixProvider,
    TfidfProvider,
    load_embeddings,
)
from ..evaluator import MetricsReport, evaluate_trees
from ..index import PremiseIndex, build_index, refresh, retrieve_top_k
from ..sampler import RecordedOracle, SamplePools
from ..trainer import TrainConfig, fine_tune

EVENT_KINDS = ("session", "fact", "attach")


class BusyError(RuntimeError):
    """Raised when a second training job is requested while one runs."""


@dataclass
class ServeConfig:
    corpus_path: str
    data_dir: str
    trees_path: Optional[str] = None
    trees_format: str = "canonical"
    backend: str = "tfidf"
    vectors_path: Optional[str] = None
    ids_path: Optional[str] = None
    mode: str = "single"
    default_k: int = 20
    host: str = "127.0.0.1"
    port: int = 8470


@dataclass
class Session:
    id: str
    root_id: str
    edges: list[tuple[str, str]] = field(default_factory=list)

    def tree(self) -> EntailmentTree:
        return build_tree(self.id, self.root_id, list(self.edges))

    def try_edge(self, parent_id: str, child_id: str) -> None:
        """Validate that adding the edge keeps the tree legal; raise otherwise."""
        build_tree(self.id, self.root_id, list(self.edges) + [(parent_id, child_id)])


@dataclass
class TrainJob:
    run_id: str
    state: str = "running"
    epoch_losses: list[float] = field(default_factory=list)
    skipped_triplets: int = 0
    wall_seconds: float = 0.0
    index_generation: Optional[int] = None
    detail: Optional[str] = None
    thread: Optional[threading.Thread] = None


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class AppState:
    """All mutable server state behind one coarse lock plus a live snapshot."""

    def __init__(
        self,
        corpus: Corpus,
        stack: EncoderStack,
        data_dir: str,
        gold_trees: Optional[list[EntailmentTree]] = None,
        default_k: int = 20,
    ):
        self.corpus = corpus
        self.gold_trees = gold_trees or []
        self.default_k = default_k
        self.data_dir = data_dir
        os.makedirs(data_dir, exist_ok=True)
        self.annotations_path = os.path.join(data_dir, "annotations.jsonl")
        self.events_path = os.path.join(data_dir, "events.jsonl")

        self._lock = threading.RLock()
        self.sessions: dict[str, Session] = {}
        self.jobs: dict[str, TrainJob] = {}
        self._job_counter = 0
        self._session_counter = 0
        self._training = False
        self._metrics_cache: dict[int, MetricsReport] = {}

        self._replay_events()
        if os.path.exists(self.annotations_path):
            self.oracle = RecordedOracle.replay(self.annotations_path)
        else:
            self.oracle = RecordedOracle(log_path=self.annotations_path)

        self._live = (stack, build_index(stack, corpus))

    # -- durable event log ------------------------------------------------

    def _append_event(self, payload: dict) -> None:
        line = json.dumps(payload, ensure_ascii=False)
        with open(self.events_path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()
            os.fsync(fh.fileno())

    def _replay_events(self) -> None:
        if not os.path.exists(self.events_path):
            return
        with open(self.events_path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, start=1):
                raw = raw.strip()
                if not raw:
                    continue
                try:
                    rec = json.loads(raw)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"bad JSON in event log: {exc}", line=lineno)
                kind = rec.get("event")
                if kind == "session":
                    sid = rec["session"]
                    self.sessions[sid] = Session(id=sid, root_id=rec["hypothesis_id"])
                    self._session_counter += 1
                elif kind == "fact":
                    fact = self.corpus.add_manual(rec["text"])
                    if fact.id != rec["fact_id"]:
                        raise ParseError(
                            f"manual fact replay mismatch: expected {rec['fact_id']!r},"
                            f" regenerated {fact.id!r}",
                            line=lineno,
                        )
                elif kind == "attach":
                    session = self.sessions[rec["session"]]
                    session.edges.append((rec["parent_id"], rec["child_id"]))
                else:
                    raise ParseError(f"unknown event kind {kind!r}", line=lineno)

    # -- live snapshot ----------------------------------------------------

    def live(self) -> tuple[EncoderStack, PremiseIndex]:
        with self._lock:
            return self._live

    def _swap_live(self, stack: EncoderStack, index: PremiseIndex) -> None:
        with self._lock:
            self._live = (stack, index)

    @property
    def index_generation(self) -> int:
        return self.live()[1].generation

    # -- session + tree ---------------------------------------------------

    def hypotheses(self) -> list[tuple[str, str]]:
        if self.gold_trees:
            out = []
            seen = set()
            for tree in self.gold_trees:
                root = tree.root.fact_id
                if root not in seen:
                    seen.add(root)
                    out.append((root, self.corpus.get(root).text))
            return out
        return [(f.id, f.text) for f in self.corpus]

    def create_session(self, hypothesis_id: str) -> str:
        with self._lock:
            self.corpus.get(hypothesis_id)
            self._session_counter += 1
            sid = f"s-{self._session_counter:04d}"
            self._append_event(
                {
                    "event": "session",
                    "session": sid,
                    "hypothesis_id": hypothesis_id,
                    "ts": _now(),
                }
            )
            self.sessions[sid] = Session(id=sid, root_id=hypothesis_id)
            return sid

    def get_session(self, session_id: str) -> Session:
        try:
            return self.sessions[session_id]
        except KeyError:
            raise KeyError(f"unknown session {session_id!r}") from None

    def add_fact(self, session_id: str, text: str) -> tuple[str, bool]:
        with self._lock:
            self.get_session(session_id)
            stack, index = self._live
            fact = self.corpus.add_manual(text)
            self._append_event(
                {
                    "event": "fact",
                    "session": session_id,
                    "fact_id": fact.id,
                    "text": text,
                    "ts": _now(),
                }
            )
            encodable = False
            if stack.base.can_encode_text:
                encodable = bool(np.linalg.norm(stack.base.vector(fact)) > 0)
                # the new fact becomes retrievable right away; an import-only
                # base cannot encode it, so the index is left untouched and
                # the fact only ever appears in trees
                new_index = build_index(stack, self.corpus)
                new_index.generation = index.generation + 1
                self._live = (stack, new_index)
            return fact.id, encodable

    def attach(self, session_id: str, parent_id: str, child_id: str) -> None:
        with self._lock:
            session = self.get_session(session_id)
            self.corpus.get(parent_id)
            self.corpus.get(child_id)
            session.try_edge(parent_id, child_id)
            self._append_event(
                {
                    "event": "attach",
                    "session": session_id,
                    "parent_id": parent_id,
                    "child_id": child_id,
                    "ts": _now(),
                }
            )
            session.edges.append((parent_id, child_id))

    def tree(self, session_id: str) -> EntailmentTree:
        with self._lock:
            return self.get_session(session_id).tree()

    # -- annotation + retrieval -------------------------------------------

    def annotate(self, session_id: str, query_id: str, fact_id: str, verdict: str) -> None:
        with self._lock:
            self.get_session(session_id)
            self.corpus.get(query_id)
            self.corpus.get(fact_id)
            self.oracle.record(query_id, fact_id, verdict, session=session_id)

    def query(self, session_id: str, node_id: str, k: int) -> list[tuple[str, float]]:
        self.get_session(session_id)
        query = self.corpus.get(node_id)
        stack, index = self.live()
        return retrieve_top_k(index, stack, query, k, exclude_self=True)

    def pools(self) -> SamplePools:
        with self._lock:
            return self.oracle.pools()

    def metrics(self) -> MetricsReport:
        if not self.gold_trees:
            raise LookupError("no evaluation trees configured")
        stack, index = self.live()
        with self._lock:
            cached = self._metrics_cache.get(index.generation)
            if cached is not None:
                return cached
        # same protocol as /query: a node never retrieves itself
        report = evaluate_trees(
            self.gold_trees, index, stack, self.corpus, exclude_self=True
        )
        with self._lock:
            self._metrics_cache[index.generation] = report
        return report

    # -- training ----------------------------------------------------------

    def _pool_triplets(self) -> TripletStore:
        pools = self.pools()
        by_query_pos: dict[str, list[str]] = {}
        by_query_neg: dict[str, list[str]] = {}
        for q, p in sorted(pools.positives):
            by_query_pos.setdefault(q, []).append(p)
        for q, n in sorted(pools.negatives):
            by_query_neg.setdefault(q, []).append(n)
        store = TripletStore()
        for q, positives in by_query_pos.items():
            for p in positives:
                for n in by_query_neg.get(q, []):
                    store.append(TripletRecord(q, p, n, "active"))
        return store

    def start_training(self, overrides: dict) -> str:
        with self._lock:
            if self._training:
                raise BusyError("a training job is already running")
            store = self._pool_triplets()
            if len(store) == 0:
                raise ValueError(
                    "no training triplets: annotate at least one positive and "
                    "one negative for the same query"
                )
            live_stack, live_index = self._live
            cfg = TrainConfig(**{"mode": live_stack.mode, **overrides})
            if cfg.mode == live_stack.mode:
                stack = live_stack.copy()
            else:
                stack = EncoderStack(live_stack.base, cfg.mode)
            self._job_counter += 1
            run_id = f"run-{self._job_counter:04d}"
            job = TrainJob(run_id=run_id)
            self.jobs[run_id] = job
            self._training = True

        def work() -> None:
            t0 = time.monotonic()
            try:
                _, report = fine_tune(store, stack, cfg, self.corpus)
                with self._lock:
                    new_index = refresh(self._live[1], stack, self.corpus)
                    self._live = (stack, new_index)
                    job.state = "done"
                    job.epoch_losses = list(report.epoch_losses)
                    job.skipped_triplets = report.skipped_triplets
                    job.wall_seconds = time.monotonic() - t0
                    job.index_generation = new_index.generation
            except Exception as exc:
                with self._lock:
                    job.state = "failed"
                    job.detail = str(exc)
                    job.wall_seconds = time.monotonic() - t0
            finally:
                with self._lock:
                    self._training = False

        thread = threading.Thread(target=work, name=f"train-{run_id}", daemon=True)
        job.thread = thread
        thread.start()
        return run_id

    def job_status(self, run_id: str) -> TrainJob:
        with self._lock:
            try:
                return self.jobs[run_id]
            except KeyError:
                raise KeyError(f"unknown training run {run_id!r}") from None

    def wait_training(self, run_id: str, timeout: float = 60.0) -> TrainJob:
        job = self.job_status(run_id)
        if job.thread is not None:
            job.thread.join(timeout)
        return self.job_status(run_id)


def state_from_config(config: ServeConfig) -> AppState:
    """Load data files and assemble the server state."""
    gold_trees: Optional[list[EntailmentTree]] = None
    if config.trees_path:
        corpus, gold_trees = ingest_trees(config.trees_path, config.trees_format)
        for fact in read_corpus(config.corpus_path):
            corpus.add(fact)
    else:
        corpus = read_corpus(config.corpus_path)

    if config.backend == "tfidf":
        base = TfidfProvider(corpus)
    elif config.backend == "import":
        if not config.vectors_path or not config.ids_path:
            raise ValueError("import backend needs vectors_path and ids_path")
        base = MatrixProvider(load_embeddings(config.vectors_path, config.ids_path))
    else:
        raise ValueError(f"unknown backend {config.backend!r}")

    stack = EncoderStack(base, config.mode)
    return AppState(
        corpus,
        stack,
        data_dir=config.data_dir,
        gold_trees=gold_trees,
        default_k=config.default_k,
    )
