"""Ranked-retrieval metrics and the similarity-bias analysis.

All metrics use binary relevance (gold-set membership) and depend only on
the ranking order. Queries with empty gold sets are excluded from averages
and counted separately, since every metric here is undefined for them.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .corpus import Corpus, EntailmentTree, jaccard_overlap
from .encoder import EncoderStack, cosine_score
from .index import PremiseIndex, retrieve_top_k

DEFAULT_K_LIST = (10, 20, 30, 40, 50)


def average_precision(ranking: Sequence[str], gold: set[str]) -> float:
    """Mean over gold items of precision at their rank; misses contribute 0."""
    if not gold:
        raise ValueError("average_precision needs a non-empty gold set")
    hits = 0
    total = 0.0
    for rank, fid in enumerate(ranking, start=1):
        if fid in gold:
            hits += 1
            total += hits / rank
    return total / len(gold)


def ndcg_at_k(ranking: Sequence[str], gold: set[str], k: Optional[int] = None) -> float:
    """Binary-relevance NDCG truncated at k (k=None means the full ranking)."""
    if not gold:
        return 0.0
    if k is None:
        k = len(ranking)
    dcg = 0.0
    for rank, fid in enumerate(ranking[:k], start=1):
        if fid in gold:
            dcg += 1.0 / math.log2(rank + 1)
    ideal_hits = min(len(gold), k)
    idcg = sum(1.0 / math.log2(r + 1) for r in range(1, ideal_hits + 1))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def hit_at_k(
    ranking: Sequence[str], gold: set[str], k: int, variant: str = "recall"
) -> float:
    """Fraction of gold found in the top k (``recall``), or 1.0 if any
    gold item appears there (``any``)."""
    if not gold:
        raise ValueError("hit_at_k needs a non-empty gold set")
    found = sum(1 for fid in ranking[:k] if fid in gold)
    if variant == "recall":
        return found / len(gold)
    if variant == "any":
        return 1.0 if found > 0 else 0.0
    raise ValueError(f"unknown hit variant {variant!r}")


@dataclass
class QueryResult:
    query_id: str
    ap: float
    ndcg: float
    ndcg_at: dict[int, float]
    hit_at: dict[int, float]


@dataclass
class MetricsReport:
    map: float
    ndcg: float
    ndcg_at: dict[int, float]
    hit_at: dict[int, float]
    n_queries: int
    n_skipped_empty_gold: int = 0
    per_query: Optional[list[QueryResult]] = None

    def to_dict(self) -> dict:
        out = {
            "map": self.map,
            "ndcg": self.ndcg,
            "ndcg_at": {str(k): v for k, v in sorted(self.ndcg_at.items())},
            "hit_at": {str(k): v for k, v in sorted(self.hit_at.items())},
            "n_queries": self.n_queries,
            "n_skipped_empty_gold": self.n_skipped_empty_gold,
        }
        if self.per_query is not None:
            out["per_query"] = [
                {
                    "query_id": q.query_id,
                    "ap": q.ap,
                    "ndcg": q.ndcg,
                    "ndcg_at": {str(k): v for k, v in sorted(q.ndcg_at.items())},
                    "hit_at": {str(k): v for k, v in sorted(q.hit_at.items())},
                }
                for q in self.per_query
            ]
        return out


def evaluate_rankings(
    instances: Iterable[tuple[str, Sequence[str], set[str]]],
    k_list: Sequence[int] = DEFAULT_K_LIST,
    hit_variant: str = "recall",
    keep_per_query: bool = False,
) -> MetricsReport:
    """Aggregate metrics over (query_id, ranking, gold) instances."""
    per_query: list[QueryResult] = []
    skipped = 0
    for query_id, ranking, gold in instances:
        if not gold:
            skipped += 1
            continue
        per_query.append(
            QueryResult(
                query_id=query_id,
                ap=average_precision(ranking, gold),
                ndcg=ndcg_at_k(ranking, gold, None),
                ndcg_at={k: ndcg_at_k(ranking, gold, k) for k in k_list},
                hit_at={k: hit_at_k(ranking, gold, k, hit_variant) for k in k_list},
            )
        )
    n = len(per_query)
    if n == 0:
        empty = {k: 0.0 for k in k_list}
        return MetricsReport(0.0, 0.0, dict(empty), dict(empty), 0, skipped)
    report = MetricsReport(
        map=sum(q.ap for q in per_query) / n,
        ndcg=sum(q.ndcg for q in per_query) / n,
        ndcg_at={k: sum(q.ndcg_at[k] for q in per_query) / n for k in k_list},
        hit_at={k: sum(q.hit_at[k] for q in per_query) / n for k in k_list},
        n_queries=n,
        n_skipped_empty_gold=skipped,
        per_query=per_query if keep_per_query else None,
    )
    return report


def tree_queries(trees: Iterable[EntailmentTree]) -> list[tuple[str, str, set[str]]]:
    """(tree_id, parent_id, gold child ids) for every parent node with children."""
    queries = []
    for tree in trees:
        by_parent: dict[str, set[str]] = {}
        order: list[str] = []
        for node in tree.root.walk():
            if node.children:
                if node.fact_id not in by_parent:
                    by_parent[node.fact_id] = set()
                    order.append(node.fact_id)
                by_parent[node.fact_id].update(c.fact_id for c in node.children)
        for parent in order:
            queries.append((tree.id, parent, by_parent[parent]))
    return queries


def evaluate_trees(
    trees: list[EntailmentTree],
    index: PremiseIndex,
    stack: EncoderStack,
    corpus: Corpus,
    k_list: Sequence[int] = DEFAULT_K_LIST,
    hit_variant: str = "recall",
    exclude_self: bool = False,
    keep_per_query: bool = False,
) -> MetricsReport:
    """Rank the full premise corpus for every parent node and aggregate.

    exclude_self defaults to False here so reported numbers reflect the raw
    retrieval behavior, including a query fact outranking everything with
    itself; tree construction flows pass True instead.
    """
    instances = []
    for tree_id, parent_id, gold in tree_queries(trees):
        ranked = retrieve_top_k(
            index, stack, corpus.get(parent_id), k=len(index), exclude_self=exclude_self
        )
        instances.append((f"{tree_id}:{parent_id}", [fid for fid, _ in ranked], gold))
    return evaluate_rankings(
        instances, k_list=k_list, hit_variant=hit_variant, keep_per_query=keep_per_query
    )


@dataclass
class PairClassification:
    """Gold pairs split into hits/misses at K, plus spurious retrievals.

    A gold (parent, child) is a TP when the child shows up in the parent's
    top-K and a FN otherwise. A retrieved candidate that belongs to no node
    of the query's own tree is a FP for that parent.
    """

    tps: set[tuple[str, str]]
    fns: set[tuple[str, str]]
    fps: set[tuple[str, str]]
    k_used: int

    def counts(self) -> dict[str, int]:
        return {"tp": len(self.tps), "fn": len(self.fns), "fp": len(self.fps)}


def classify_pairs(
    trees: list[EntailmentTree],
    index: PremiseIndex,
    stack: EncoderStack,
    corpus: Corpus,
    k: int = 20,
    exclude_self: bool = False,
) -> PairClassification:
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    tps: set[tuple[str, str]] = set()
    fns: set[tuple[str, str]] = set()
    fps: set[tuple[str, str]] = set()
    for tree in trees:
        tree_facts = tree.fact_ids()
        by_parent: dict[str, set[str]] = {}
        for node in tree.root.walk():
            if node.children:
                by_parent.setdefault(node.fact_id, set()).update(
                    c.fact_id for c in node.children
                )
        for parent_id, gold_children in by_parent.items():
            retrieved = retrieve_top_k(
                index, stack, corpus.get(parent_id), k=k, exclude_self=exclude_self
            )
            retrieved_ids = {fid for fid, _ in retrieved}
            for child_id in gold_children:
                if child_id in retrieved_ids:
                    tps.add((parent_id, child_id))
                else:
                    fns.add((parent_id, child_id))
            for fid in retrieved_ids:
                if fid not in tree_facts:
                    fps.add((parent_id, fid))
    return PairClassification(tps=tps, fns=fns, fps=fps, k_used=k)


@dataclass
class GroupDistribution:
    group: str
    measure: str
    bin_edges: list[float]
    counts: list[int]
    mean: float
    median: float
    n: int


@dataclass
class BiasReport:
    distributions: list[GroupDistribution] = field(default_factory=list)

    def stat(self, group: str, measure: str) -> GroupDistribution:
        for d in self.distributions:
            if d.group == group and d.measure == measure:
                return d
        raise KeyError((group, measure))

    def to_csv(self) -> str:
        lines = ["group,measure,bin_lo,bin_hi,count"]
        for d in self.distributions:
            for i, count in enumerate(d.counts):
                lines.append(
                    f"{d.group},{d.measure},{d.bin_edges[i]:.6f},"
                    f"{d.bin_edges[i + 1]:.6f},{count}"
                )
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {
            f"{d.group}.{d.measure}": {"mean": d.mean, "median": d.median, "n": d.n}
            for d in self.distributions
        }


def _histogram(values: list[float], n_bins: int) -> tuple[list[float], list[int]]:
    # Bins span [0, 1]; out-of-range values clamp into the edge bins.
    edges = [i / n_bins for i in range(n_bins + 1)]
    counts = [0] * n_bins
    for v in values:
        idx = min(max(int(v * n_bins), 0), n_bins - 1)
        counts[idx] += 1
    return edges, counts


def bias_report(
    classification: PairClassification,
    corpus: Corpus,
    stack: EncoderStack,
    n_bins: int = 20,
) -> BiasReport:
    """Token-overlap and cosine distributions per TP/FN/FP group.

    Cosine uses the query-side and premise-side encodings of the supplied
    stack, so the same classification can be inspected under different
    fine-tuning states.
    """
    groups = [
        ("tp", classification.tps),
        ("fn", classification.fns),
        ("fp", classification.fps),
    ]
    report = BiasReport()
    for name, pairs in groups:
        overlaps: list[float] = []
        cosines: list[float] = []
        for query_id, cand_id in sorted(pairs):
            q, c = corpus.get(query_id), corpus.get(cand_id)
            overlaps.append(jaccard_overlap(q, c))
            cosines.append(
                cosine_score(stack.encode(q, "query"), stack.encode(c, "premise"))
            )
        for measure, values in (("jaccard", overlaps), ("cosine", cosines)):
            edges, counts = _histogram(values, n_bins)
            report.distributions.append(
                GroupDistribution(
                    group=name,
                    measure=measure,
                    bin_edges=edges,
                    counts=counts,
                    mean=statistics.fmean(values) if values else 0.0,
                    median=statistics.median(values) if values else 0.0,
                    n=len(values),
                )
            )
    return report
