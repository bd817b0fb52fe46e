"""Embedding providers and the trainable adapter stack.

The base provider (TF-IDF or an imported matrix) is frozen; what trains is a
square linear adapter per side. The fixed side returns base vectors untouched
and anchors the regularizer. Embedding matrix file format:

    EMB v1 <count> <dim>
    <dim space-separated floats>        (one line per id, repr precision)

with a companion ids file holding one id per line.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .corpus import Corpus, Fact, tokenize

MODES = ("single", "siamese", "dual")
SIDES = ("query", "premise", "fixed")


class ZeroVectorWarning(UserWarning):
    """A degenerate all-zero embedding entered a similarity computation."""


class EmbeddingLoadError(ValueError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass
class EmbeddingMatrix:
    ids: tuple[str, ...]
    rows: np.ndarray  # shape (len(ids), dim)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        if self.rows.ndim != 2 or self.rows.shape[0] != len(self.ids):
            raise ValueError(
                f"rows shape {self.rows.shape} does not match {len(self.ids)} ids"
            )
        if not np.all(np.isfinite(self.rows)):
            raise ValueError("embedding matrix contains NaN/Inf")
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in embedding matrix")
        self._row_index = {fid: i for i, fid in enumerate(self.ids)}

    @property
    def dim(self) -> int:
        return self.rows.shape[1]

    def row(self, fact_id: str) -> np.ndarray:
        return self.rows[self._row_index[fact_id]]

    def __contains__(self, fact_id: str) -> bool:
        return fact_id in self._row_index


def save_embeddings(matrix: EmbeddingMatrix, vectors_path: str, ids_path: str) -> None:
    with open(vectors_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"EMB v1 {len(matrix.ids)} {matrix.dim}\n")
        for row in matrix.rows:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")
    with open(ids_path, "w", encoding="utf-8", newline="\n") as fh:
        for fid in matrix.ids:
            fh.write(fid + "\n")


def load_embeddings(vectors_path: str, ids_path: str) -> EmbeddingMatrix:
    with open(ids_path, encoding="utf-8") as fh:
        ids = tuple(line.rstrip("\n") for line in fh if line.strip())
    with open(vectors_path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 4 or header[0] != "EMB" or header[1] != "v1":
            raise EmbeddingLoadError("bad header, expected 'EMB v1 <count> <dim>'", 1)
        try:
            count, dim = int(header[2]), int(header[3])
        except ValueError as exc:
            raise EmbeddingLoadError(str(exc), 1) from exc
        rows = np.empty((count, dim), dtype=np.float64)
        for i in range(count):
            lineno = i + 2
            line = fh.readline()
            if not line:
                raise EmbeddingLoadError(f"expected {count} rows, got {i}", lineno)
            parts = line.split()
            if len(parts) != dim:
                raise EmbeddingLoadError(
                    f"expected {dim} values, got {len(parts)}", lineno
                )
            try:
                rows[i] = [float(p) for p in parts]
            except ValueError as exc:
                raise EmbeddingLoadError(f"non-numeric value: {exc}", lineno) from exc
            if not np.all(np.isfinite(rows[i])):
                raise EmbeddingLoadError("non-finite value", lineno)
    if count != len(ids):
        raise EmbeddingLoadError(
            f"vector count {count} does not match {len(ids)} ids"
        )
    return EmbeddingMatrix(ids=ids, rows=rows)


class TfidfProvider:
    """Term-frequency / inverse-document-frequency sentence vectors.

    idf(t) = ln((1+N)/(1+df(t))) + 1, tf = raw count, rows L2-normalized,
    vocabulary in lexicographic order. Can encode unseen text on the fly,
    which is how manual annotator facts become queryable.
    """

    can_encode_text = True

    def __init__(self, corpus: Corpus):
        facts = list(corpus)
        if not facts:
            raise ValueError("cannot fit TF-IDF on an empty corpus")
        vocab = sorted({t for f in facts for t in f.tokens})
        self.vocabulary: dict[str, int] = {t: i for i, t in enumerate(vocab)}
        n_docs = len(facts)
        df = np.zeros(len(vocab), dtype=np.float64)
        for f in facts:
            for t in f.token_set:
                df[self.vocabulary[t]] += 1
        self.idf = np.log((1.0 + n_docs) / (1.0 + df)) + 1.0
        rows = np.zeros((n_docs, len(vocab)), dtype=np.float64)
        for i, f in enumerate(facts):
            rows[i] = self._raw_vector(f.tokens)
        self.matrix = EmbeddingMatrix(ids=tuple(f.id for f in facts), rows=rows)

    def _raw_vector(self, tokens: Iterable[str]) -> np.ndarray:
        vec = np.zeros(len(self.vocabulary), dtype=np.float64)
        for t in tokens:
            idx = self.vocabulary.get(t)
            if idx is not None:
                vec[idx] += 1.0
        vec *= self.idf
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    @property
    def dim(self) -> int:
        return self.matrix.dim

    @property
    def ids(self) -> tuple[str, ...]:
        return self.matrix.ids

    def has_id(self, fact_id: str) -> bool:
        return fact_id in self.matrix

    def vector(self, fact: Fact) -> np.ndarray:
        if fact.id in self.matrix:
            return self.matrix.row(fact.id)
        return self.encode_text(fact.text)

    def encode_text(self, text: str) -> np.ndarray:
        return self._raw_vector(tokenize(text))


def tfidf_encode(corpus: Corpus) -> EmbeddingMatrix:
    """Corpus-order TF-IDF embedding matrix (see TfidfProvider for the formula)."""
    return TfidfProvider(corpus).matrix


class MatrixProvider:
    """Imported pre-computed embeddings; lookup by id only."""

    can_encode_text = False

    def __init__(self, matrix: EmbeddingMatrix):
        self.matrix = matrix

    @property
    def dim(self) -> int:
        return self.matrix.dim

    @property
    def ids(self) -> tuple[str, ...]:
        return self.matrix.ids

    def has_id(self, fact_id: str) -> bool:
        return fact_id in self.matrix

    def vector(self, fact: Fact) -> np.ndarray:
        if fact.id not in self.matrix:
            raise LookupError(
                f"fact {fact.id!r} has no imported embedding and the base "
                "provider cannot encode raw text"
            )
        return self.matrix.row(fact.id)

    def encode_text(self, text: str) -> np.ndarray:
        raise LookupError("imported embedding base cannot encode raw text")


class Adapter:
    """Trainable square matrix applied on top of frozen base embeddings.

    A fresh adapter is the identity; applying an identity adapter returns
    the input bit-for-bit (no multiplication), which keeps untouched stacks
    exactly equal to their base embeddings.
    """

    def __init__(self, dim: int, trainable: bool = True):
        self.weights = np.eye(dim, dtype=np.float64)
        self.trainable = trainable
        self._is_identity = True

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def is_identity(self) -> bool:
        return self._is_identity

    def set_weights(self, weights: np.ndarray) -> None:
        weights = np.asarray(weights, dtype=np.float64)
        if weights.shape != self.weights.shape:
            raise ValueError(f"expected shape {self.weights.shape}, got {weights.shape}")
        if not np.all(np.isfinite(weights)):
            raise ValueError("adapter weights contain NaN/Inf")
        self.weights = weights.copy()
        self._is_identity = bool(np.array_equal(self.weights, np.eye(self.dim)))

    def add_scaled(self, grad: np.ndarray, scale: float) -> None:
        """In-place update weights += scale * grad (the trainer's step)."""
        if not self.trainable:
            raise ValueError("adapter is frozen")
        self.weights = self.weights + scale * np.asarray(grad, dtype=np.float64)
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("adapter weights became non-finite")
        self._is_identity = False

    def apply(self, vec: np.ndarray) -> np.ndarray:
        if self._is_identity:
            return vec
        return self.weights @ vec

    def apply_many(self, rows: np.ndarray) -> np.ndarray:
        if self._is_identity:
            return rows
        return rows @ self.weights.T

    def frobenius_distance_to_identity(self) -> float:
        return float(np.linalg.norm(self.weights - np.eye(self.dim)))

    def copy(self) -> "Adapter":
        out = Adapter(self.dim, trainable=self.trainable)
        out.weights = self.weights.copy()
        out._is_identity = self._is_identity
        return out


class EncoderStack:
    """Base provider plus per-side adapters; the fixed side never changes.

    single  - only the query adapter trains, premise side is frozen identity
    siamese - query and premise share one adapter object
    dual    - independent adapters on both sides
    """

    def __init__(self, base, mode: str = "single"):
        if mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
        self.base = base
        self.mode = mode
        dim = base.dim
        if mode == "single":
            self.query_adapter = Adapter(dim, trainable=True)
            self.premise_adapter = Adapter(dim, trainable=False)
        elif mode == "siamese":
            shared = Adapter(dim, trainable=True)
            self.query_adapter = shared
            self.premise_adapter = shared
        else:
            self.query_adapter = Adapter(dim, trainable=True)
            self.premise_adapter = Adapter(dim, trainable=True)

    @property
    def dim(self) -> int:
        return self.base.dim

    def base_vector(self, fact: Fact) -> np.ndarray:
        return self.base.vector(fact)

    def encode(self, fact: Fact, side: str) -> np.ndarray:
        if side not in SIDES:
            raise ValueError(f"side must be one of {SIDES}, got {side!r}")
        vec = self.base.vector(fact)
        if side == "fixed":
            return vec
        adapter = self.query_adapter if side == "query" else self.premise_adapter
        return adapter.apply(vec)

    def encode_many(self, facts: list[Fact], side: str) -> np.ndarray:
        rows = np.stack([self.base.vector(f) for f in facts])
        if side == "fixed":
            return rows
        adapter = self.query_adapter if side == "query" else self.premise_adapter
        return adapter.apply_many(rows)

    def trainable_parameters(self) -> dict[str, Adapter]:
        """Named trainable adapters; siamese exposes the shared one once."""
        if self.mode == "single":
            return {"query": self.query_adapter}
        if self.mode == "siamese":
            return {"shared": self.query_adapter}
        return {"query": self.query_adapter, "premise": self.premise_adapter}

    def copy(self) -> "EncoderStack":
        out = EncoderStack.__new__(EncoderStack)
        out.base = self.base
        out.mode = self.mode
        if self.mode == "siamese":
            shared = self.query_adapter.copy()
            out.query_adapter = shared
            out.premise_adapter = shared
        else:
            out.query_adapter = self.query_adapter.copy()
            out.premise_adapter = self.premise_adapter.copy()
        return out


def cosine_score(u: np.ndarray, v: np.ndarray) -> float:
    """Cosine similarity; all-zero inputs score 0 and raise ZeroVectorWarning."""
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 or nv == 0.0:
        warnings.warn("cosine_score over a zero vector", ZeroVectorWarning, stacklevel=2)
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


ADAPTER_MAGIC = "ADAPT v1"


def save_adapter(adapter: Adapter, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(f"{ADAPTER_MAGIC} {adapter.dim}\n")
        for row in adapter.weights:
            fh.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_adapter(path: str, trainable: bool = True) -> Adapter:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 3 or " ".join(header[:2]) != ADAPTER_MAGIC:
            raise EmbeddingLoadError("bad header, expected 'ADAPT v1 <dim>'", 1)
        dim = int(header[2])
        weights = np.empty((dim, dim), dtype=np.float64)
        for i in range(dim):
            parts = fh.readline().split()
            if len(parts) != dim:
                raise EmbeddingLoadError(f"expected {dim} values", i + 2)
            weights[i] = [float(p) for p in parts]
    adapter = Adapter(dim, trainable=trainable)
    adapter.set_weights(weights)
    return adapter
