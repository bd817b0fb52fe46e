"""Exact top-K cosine retrieval over premise-side encodings.

The index is a flat matrix of unit-normalized premise vectors; queries are
scored with one dense dot product and sorted. Indexes are immutable; refresh
builds a new generation that callers swap in atomically.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Fact
from .encoder import EncoderStack


@dataclass
class PremiseIndex:
    ids: tuple[str, ...]
    unit_rows: np.ndarray
    generation: int = 0
    zero_ids: frozenset[str] = field(default_factory=frozenset)

    def __post_init__(self):
        if self.unit_rows.shape[0] != len(self.ids):
            raise ValueError("ids and rows are misaligned")

    def __len__(self) -> int:
        return len(self.ids)


def _normalize_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(rows, axis=1)
    zero_mask = norms == 0.0
    safe = np.where(zero_mask, 1.0, norms)
    return rows / safe[:, None], zero_mask


def build_index(stack: EncoderStack, corpus: Corpus) -> PremiseIndex:
    """Encode every corpus fact premise-side; zero vectors are kept but flagged."""
    facts = list(corpus)
    rows = stack.encode_many(facts, side="premise")
    unit_rows, zero_mask = _normalize_rows(rows)
    ids = tuple(f.id for f in facts)
    zero_ids = frozenset(fid for fid, z in zip(ids, zero_mask) if z)
    return PremiseIndex(ids=ids, unit_rows=unit_rows, generation=0, zero_ids=zero_ids)


def refresh(index: PremiseIndex, stack: EncoderStack, corpus: Corpus) -> PremiseIndex:
    """Re-encode all entries with the current premise adapter, bumping generation.

    In single mode the premise adapter is frozen identity, so the returned
    rows equal the old rows exactly.
    """
    facts = [corpus.get(fid) for fid in index.ids]
    rows = stack.encode_many(facts, side="premise")
    unit_rows, zero_mask = _normalize_rows(rows)
    zero_ids = frozenset(fid for fid, z in zip(index.ids, zero_mask) if z)
    return PremiseIndex(
        ids=index.ids,
        unit_rows=unit_rows,
        generation=index.generation + 1,
        zero_ids=zero_ids,
    )


def retrieve_top_k(
    index: PremiseIndex,
    stack: EncoderStack,
    query: Fact,
    k: int,
    exclude_self: bool = True,
) -> list[tuple[str, float]]:
    """The k highest-cosine entries for the query-side encoding, descending.

    Ties break on lexicographic fact id so rankings are reproducible. With
    ``exclude_self`` the entry matching the query's own id is skipped before
    the cut. Returns fewer than k only when the index is smaller.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    qvec = stack.encode(query, side="query")
    norm = float(np.linalg.norm(qvec))
    if norm == 0.0:
        scores = np.zeros(len(index.ids))
    else:
        scores = index.unit_rows @ (qvec / norm)
    order = sorted(range(len(index.ids)), key=lambda i: (-scores[i], index.ids[i]))
    out: list[tuple[str, float]] = []
    for i in order:
        if exclude_self and index.ids[i] == query.id:
            continue
        out.append((index.ids[i], float(scores[i])))
        if len(out) == k:
            break
    return out
