"""Active contrastive sampling.

The core loop retrieves top-k candidates for a query node, asks an oracle
(gold trees or a human) which of them actually explain the query, recurses
into the accepted ones, and keeps the rejected ones as hard negatives.
Pools from that loop are composed with ordinary distractor triplets into a
training set, optionally over several sample-train rounds.
"""

from __future__ import annotations

import json
import logging
import os
import random
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Callable, Iterable, Optional, Sequence

from .corpus import (
    Corpus,
    EntailmentTree,
    Fact,
    ParseError,
    TripletRecord,
    TripletStore,
    extract_pairs,
)
from .encoder import EncoderStack
from .index import PremiseIndex, refresh, retrieve_top_k

logger = logging.getLogger(__name__)

VERDICTS = ("pos", "neg")


class GoldOracle:
    """Simulated expert: a candidate explains a query exactly when the
    gold trees contain that (parent, child) edge.

    ``max_depth`` counts query levels (edges plus one), so a budget of
    max_depth lets leaf nodes get one retrieve-and-judge round of their own.
    """

    kind = "gold"

    def __init__(self, trees: Iterable[EntailmentTree]):
        self.children: dict[str, set[str]] = {}
        self.max_depth = 0
        for tree in trees:
            for parent_id, child_id in extract_pairs(tree):
                self.children.setdefault(parent_id, set()).add(child_id)
            self.max_depth = max(self.max_depth, tree.depth() + 1)

    def explains(self, query_id: str, candidate_id: str) -> bool:
        return candidate_id in self.children.get(query_id, set())


class RecordedOracle:
    """Replayable human verdicts.

    A verdict is appended to the log before it lands in memory, so a crash
    never loses an acknowledged annotation. The latest verdict for a
    (query, candidate) pair wins.
    """

    kind = "interactive"

    def __init__(self, log_path: Optional[str] = None):
        self.verdicts: dict[tuple[str, str], str] = {}
        self._log_path = log_path

    def record(
        self,
        query_id: str,
        candidate_id: str,
        verdict: str,
        session: str = "",
        ts: Optional[str] = None,
    ) -> None:
        if verdict not in VERDICTS:
            raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
        if self._log_path is not None:
            append_annotation(self._log_path, query_id, candidate_id, verdict, session, ts)
        self.verdicts[(query_id, candidate_id)] = verdict

    def has_verdict(self, query_id: str, candidate_id: str) -> bool:
        return (query_id, candidate_id) in self.verdicts

    def explains(self, query_id: str, candidate_id: str) -> bool:
        try:
            return self.verdicts[(query_id, candidate_id)] == "pos"
        except KeyError:
            raise LookupError(
                f"no verdict recorded for ({query_id!r}, {candidate_id!r})"
            ) from None

    def pools(self, round: int = 0, max_depth: int = 0) -> "SamplePools":
        pools = SamplePools(round=round, max_depth=max_depth)
        for (query_id, candidate_id), verdict in sorted(self.verdicts.items()):
            pools.add(query_id, candidate_id, positive=(verdict == "pos"))
        return pools

    @classmethod
    def replay(cls, log_path: str) -> "RecordedOracle":
        """Rebuild verdict state from an existing log without rewriting it."""
        oracle = cls()
        for rec in read_annotation_log(log_path):
            oracle.verdicts[(rec["query"], rec["candidate"])] = rec["verdict"]
        oracle._log_path = log_path
        return oracle


def append_annotation(
    path: str,
    query_id: str,
    candidate_id: str,
    verdict: str,
    session: str = "",
    ts: Optional[str] = None,
) -> None:
    """Append one verdict line and fsync before returning."""
    if verdict not in VERDICTS:
        raise ValueError(f"verdict must be one of {VERDICTS}, got {verdict!r}")
    if ts is None:
        ts = datetime.now(timezone.utc).isoformat()
    line = json.dumps(
        {
            "query": query_id,
            "candidate": candidate_id,
            "verdict": verdict,
            "ts": ts,
            "session": session,
        }
    )
    with open(path, "a", encoding="utf-8") as fh:
        fh.write(line + "\n")
        fh.flush()
        os.fsync(fh.fileno())


def read_annotation_log(path: str) -> list[dict]:
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            raw = raw.strip()
            if not raw:
                continue
            try:
                rec = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON in annotation log: {exc}", line=lineno)
            for key in ("query", "candidate", "verdict", "ts", "session"):
                if key not in rec:
                    raise ParseError(f"annotation missing {key!r}", line=lineno)
            if rec["verdict"] not in VERDICTS:
                raise ParseError(
                    f"annotation verdict must be one of {VERDICTS}", line=lineno
                )
            records.append(rec)
    return records


def pools_from_annotations(
    records: Iterable[dict], round: int = 0, max_depth: int = 0
) -> "SamplePools":
    """Fold a verdict log into pools, later verdicts overriding earlier ones."""
    pools = SamplePools(round=round, max_depth=max_depth)
    for rec in records:
        pools.add(rec["query"], rec["candidate"], positive=(rec["verdict"] == "pos"))
    return pools


@dataclass
class SamplePools:
    """Positive and negative (query_id, premise_id) pairs from sampling.

    The two pools stay disjoint: adding a pair to one side evicts it from
    the other, so the latest verdict always wins.
    """

    positives: set[tuple[str, str]] = field(default_factory=set)
    negatives: set[tuple[str, str]] = field(default_factory=set)
    round: int = 0
    max_depth: int = 0

    def add(self, query_id: str, premise_id: str, positive: bool) -> None:
        pair = (query_id, premise_id)
        if positive:
            self.negatives.discard(pair)
            self.positives.add(pair)
        else:
            self.positives.discard(pair)
            self.negatives.add(pair)

    def absorb(self, other: "SamplePools") -> None:
        """Union in another pool set; the incoming verdicts take precedence."""
        for query_id, premise_id in sorted(other.positives):
            self.add(query_id, premise_id, positive=True)
        for query_id, premise_id in sorted(other.negatives):
            self.add(query_id, premise_id, positive=False)

    def negatives_for(self, query_id: str) -> list[str]:
        return sorted(p for q, p in self.negatives if q == query_id)

    def positives_for(self, query_id: str) -> list[str]:
        return sorted(p for q, p in self.positives if q == query_id)

    def validate(self) -> None:
        overlap = self.positives & self.negatives
        if overlap:
            raise ValueError(f"pools overlap on {sorted(overlap)[:5]}")

    def counts(self) -> dict[str, int]:
        return {"positives": len(self.positives), "negatives": len(self.negatives)}

    def copy(self) -> "SamplePools":
        return SamplePools(
            positives=set(self.positives),
            negatives=set(self.negatives),
            round=self.round,
            max_depth=self.max_depth,
        )

    def to_json(self) -> str:
        """Canonical serialization: sorted pairs, fixed key order, no spaces.

        Two pool sets with equal content always serialize byte-identically,
        which is what the crash-recovery check compares.
        """
        payload = {
            "max_depth": self.max_depth,
            "negatives": sorted([q, p] for q, p in self.negatives),
            "positives": sorted([q, p] for q, p in self.positives),
            "round": self.round,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, text: str) -> "SamplePools":
        payload = json.loads(text)
        return cls(
            positives={(q, p) for q, p in payload["positives"]},
            negatives={(q, p) for q, p in payload["negatives"]},
            round=payload["round"],
            max_depth=payload["max_depth"],
        )


def save_pools(pools: SamplePools, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(pools.to_json() + "\n")


def load_pools(path: str) -> SamplePools:
    with open(path, "r", encoding="utf-8") as fh:
        return SamplePools.from_json(fh.read())


def acs(
    query: Fact,
    corpus: Corpus,
    index: PremiseIndex,
    stack: EncoderStack,
    oracle,
    k: int,
    depth_budget: int,
    visited: Optional[frozenset[str]] = None,
    exclude_self: bool = True,
) -> tuple[set[tuple[str, str]], set[tuple[str, str]]]:
    """One recursive retrieve-and-judge pass from a single query node.

    Every retrieved candidate is judged and lands in exactly one pool.
    Accepted candidates are recursed into with one less budget; recursion
    skips nodes already on the path from the original query (cycle guard)
    and a budget of zero returns empty pools without retrieving at all.
    """
    if depth_budget < 0:
        raise ValueError(f"depth_budget must be >= 0, got {depth_budget}")
    if visited is None:
        visited = frozenset({query.id})
    positives: set[tuple[str, str]] = set()
    negatives: set[tuple[str, str]] = set()
    if depth_budget == 0:
        return positives, negatives
    for cand_id, _score in retrieve_top_k(
        index, stack, query, k=k, exclude_self=exclude_self
    ):
        if oracle.explains(query.id, cand_id):
            positives.add((query.id, cand_id))
            if cand_id not in visited:
                sub_pos, sub_neg = acs(
                    corpus.get(cand_id),
                    corpus,
                    index,
                    stack,
                    oracle,
                    k,
                    depth_budget - 1,
                    visited | {cand_id},
                    exclude_self,
                )
                positives |= sub_pos
                negatives |= sub_neg
        else:
            negatives.add((query.id, cand_id))
    return positives, negatives


def ae_enc(
    hypotheses: Sequence[Fact],
    corpus: Corpus,
    index: PremiseIndex,
    stack: EncoderStack,
    oracle,
    k: int,
    depth_budget: Optional[int] = None,
    exclude_self: bool = True,
) -> SamplePools:
    """Union of acs runs over every hypothesis."""
    if not hypotheses:
        raise ValueError("ae_enc needs at least one hypothesis")
    if depth_budget is None:
        depth_budget = getattr(oracle, "max_depth", None)
        if depth_budget is None:
            raise ValueError("depth_budget required when the oracle has no max_depth")
    pools = SamplePools(round=0, max_depth=depth_budget)
    for hyp in hypotheses:
        pos, neg = acs(
            hyp,
            corpus,
            index,
            stack,
            oracle,
            k,
            depth_budget,
            frozenset({hyp.id}),
            exclude_self,
        )
        for query_id, premise_id in pos:
            pools.add(query_id, premise_id, positive=True)
        for query_id, premise_id in neg:
            pools.add(query_id, premise_id, positive=False)
    return pools


def tree_hypotheses(trees: Iterable[EntailmentTree], corpus: Corpus) -> list[Fact]:
    return [corpus.get(tree.root.fact_id) for tree in trees]


def compose_training_set(
    pools: SamplePools,
    gold: TripletStore,
    mix_ratio: float,
    negatives_per_positive: int = 4,
    seed: int = 0,
) -> TripletStore:
    """Blend active hard negatives with ordinary distractor negatives.

    For each positive pair, round(mix_ratio * n) negatives come from the
    query's active pool and the rest from the gold store's distractors for
    that query (falling back to the global distractor pool, then shrinking
    when even that runs dry). A query with no active negatives falls back
    to distractors entirely; such queries are flagged in the log.
    """
    if not 0.0 <= mix_ratio <= 1.0:
        raise ValueError(f"mix_ratio must be in [0, 1], got {mix_ratio}")
    if negatives_per_positive < 1:
        raise ValueError("negatives_per_positive must be >= 1")
    rng = random.Random(seed)
    by_query: dict[str, list[tuple[str, str]]] = {}
    seen: set[tuple[str, str, str]] = set()
    for rec in gold.records:
        key = (rec.h_id, rec.neg_id, rec.provenance)
        if key not in seen:
            seen.add(key)
            by_query.setdefault(rec.h_id, []).append((rec.neg_id, rec.provenance))
    global_pool = sorted({(rec.neg_id, rec.provenance) for rec in gold.records})

    out = TripletStore(round=pools.round)
    fallback_queries: set[str] = set()
    for query_id, pos_id in sorted(pools.positives):
        want_active = round(mix_ratio * negatives_per_positive)
        actives = [p for p in pools.negatives_for(query_id) if p != pos_id]
        if want_active > 0 and not actives:
            fallback_queries.add(query_id)
        take_active = min(want_active, len(actives))
        chosen = rng.sample(actives, take_active)
        for neg_id in chosen:
            out.append(TripletRecord(query_id, pos_id, neg_id, "active"))
        used = set(chosen)
        distractors = by_query.get(query_id) or global_pool
        candidates = [
            (n, prov)
            for n, prov in distractors
            if n != pos_id and n != query_id and n not in used
        ]
        want_rand = negatives_per_positive - take_active
        for neg_id, prov in rng.sample(candidates, min(want_rand, len(candidates))):
            out.append(TripletRecord(query_id, pos_id, neg_id, prov))
    if fallback_queries:
        logger.warning(
            "%d queries had no active negatives; used distractors instead: %s",
            len(fallback_queries),
            sorted(fallback_queries)[:5],
        )
    return out


def resample_iterative(
    hypotheses: Sequence[Fact],
    corpus: Corpus,
    index: PremiseIndex,
    stack: EncoderStack,
    oracle,
    k: int,
    rounds: int = 4,
    train_fn: Optional[Callable[[SamplePools, EncoderStack], Optional[EncoderStack]]] = None,
    depth_budget: Optional[int] = None,
    accumulate: bool = True,
    exclude_self: bool = True,
) -> list[SamplePools]:
    """Sample-train loop: pools are rebuilt with the latest adapters after
    every round, so each round mines negatives the current model finds hard.

    Returns one pool snapshot per round. With accumulate (the default) each
    snapshot is the running union, so pool growth is monotone; without it
    each snapshot holds only that round's pairs. train_fn receives the
    snapshot and the stack; it may mutate the stack in place or return a
    replacement. Passing train_fn=None just resamples, which with a frozen
    model yields identical snapshots.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    snapshots: list[SamplePools] = []
    accumulated = SamplePools()
    current_index = index
    for rnd in range(1, rounds + 1):
        fresh = ae_enc(
            hypotheses, corpus, current_index, stack, oracle, k, depth_budget, exclude_self
        )
        if accumulate:
            accumulated.absorb(fresh)
            snap = accumulated.copy()
        else:
            snap = fresh.copy()
        snap.round = rnd
        snap.max_depth = fresh.max_depth
        snapshots.append(snap)
        if train_fn is not None:
            replacement = train_fn(snap, stack)
            if replacement is not None:
                stack = replacement
            if stack.mode != "single":
                current_index = refresh(current_index, stack, corpus)
    return snapshots
