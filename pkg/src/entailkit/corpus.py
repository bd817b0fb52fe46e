"""Fact corpus, entailment trees, gold pairs, and triplet stores.

File formats (JSON Lines, UTF-8, LF):
  tree file:   {"id": str, "facts": [{"id": str, "text": str}, ...],
                "edges": [[parent_id, child_id], ...], "root": str,
                "distractors": [str, ...]}
  corpus file: {"id": str, "text": str}
  triplets:    {"h_id": str, "pos_id": str, "neg_id": str, "provenance": str}
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional

import numpy as np

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)

PROVENANCES = ("gold", "random", "active")
ROLES = ("hypothesis", "intermediate", "leaf")


class ParseError(ValueError):
    """Malformed input file; carries the 1-based line number."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


class IntegrityError(ValueError):
    """Structurally valid input that violates a referential or tree invariant."""


def tokenize(text: str) -> tuple[str, ...]:
    """Lowercase and split on whitespace/punctuation, dropping empty tokens."""
    return tuple(_TOKEN_RE.findall(text.lower()))


@dataclass(frozen=True)
class Fact:
    """An identified sentence in the premise corpus."""

    id: str
    text: str
    tokens: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.tokens:
            object.__setattr__(self, "tokens", tokenize(self.text))

    @property
    def token_set(self) -> frozenset[str]:
        return frozenset(self.tokens)


class Corpus:
    """Ordered, id-unique collection of facts.

    Immutable after ingestion except for ``add_manual``, which appends
    annotator-entered intermediate facts under generated ``manual-`` ids.
    """

    def __init__(self, facts: Iterable[Fact] = ()):
        self._facts: dict[str, Fact] = {}
        self._manual_counter = 0
        for f in facts:
            self.add(f)

    def add(self, fact: Fact) -> None:
        existing = self._facts.get(fact.id)
        if existing is not None:
            if existing.text != fact.text:
                raise IntegrityError(
                    f"fact id {fact.id!r} redefined with different text"
                )
            return
        self._facts[fact.id] = fact

    def add_manual(self, text: str) -> Fact:
        self._manual_counter += 1
        fact_id = f"manual-{self._manual_counter}"
        while fact_id in self._facts:
            self._manual_counter += 1
            fact_id = f"manual-{self._manual_counter}"
        fact = Fact(fact_id, text)
        self._facts[fact_id] = fact
        return fact

    def get(self, fact_id: str) -> Fact:
        try:
            return self._facts[fact_id]
        except KeyError:
            raise KeyError(f"unknown fact id {fact_id!r}") from None

    def __contains__(self, fact_id: str) -> bool:
        return fact_id in self._facts

    def __iter__(self) -> Iterator[Fact]:
        return iter(self._facts.values())

    def __len__(self) -> int:
        return len(self._facts)

    @property
    def ids(self) -> list[str]:
        return list(self._facts)


@dataclass
class TreeNode:
    """One occurrence of a fact inside a tree (a fact may recur across branches)."""

    fact_id: str
    role: str
    children: list["TreeNode"] = field(default_factory=list)

    def walk(self) -> Iterator["TreeNode"]:
        yield self
        for child in self.children:
            yield from child.walk()


@dataclass
class EntailmentTree:
    """Rooted tree of facts; the root is the hypothesis being explained."""

    id: str
    root: TreeNode
    distractor_ids: list[str] = field(default_factory=list)

    def fact_ids(self) -> set[str]:
        return {node.fact_id for node in self.root.walk()}

    def depth(self) -> int:
        """Maximum number of edges on any root-to-leaf path."""

        def _depth(node: TreeNode) -> int:
            if not node.children:
                return 0
            return 1 + max(_depth(c) for c in node.children)

        return _depth(self.root)

    def validate(self) -> None:
        _check_roles_and_paths(self.root, is_root=True, path=set())
        overlap = set(self.distractor_ids) & self.fact_ids()
        if overlap:
            raise IntegrityError(
                f"tree {self.id!r}: distractors {sorted(overlap)} appear in the tree"
            )


def _check_roles_and_paths(node: TreeNode, is_root: bool, path: set[str]) -> None:
    if node.fact_id in path:
        raise IntegrityError(f"fact {node.fact_id!r} repeats on a root-to-leaf path")
    if is_root:
        if node.role != "hypothesis":
            raise IntegrityError(f"root {node.fact_id!r} must have role 'hypothesis'")
    else:
        expected = "leaf" if not node.children else "intermediate"
        if node.role != expected:
            raise IntegrityError(
                f"node {node.fact_id!r} has role {node.role!r}, expected {expected!r}"
            )
    path = path | {node.fact_id}
    for child in node.children:
        _check_roles_and_paths(child, is_root=False, path=path)


def build_tree(
    tree_id: str,
    root_id: str,
    edges: list[tuple[str, str]],
    distractor_ids: Iterable[str] = (),
) -> EntailmentTree:
    """Assemble an EntailmentTree from its edge list.

    Edge order within a parent is preserved. Duplicate edges, edges
    unreachable from the root, and cycles raise IntegrityError.
    """
    seen_edges = set()
    children_of: dict[str, list[str]] = {}
    for parent, child in edges:
        if (parent, child) in seen_edges:
            raise IntegrityError(f"tree {tree_id!r}: duplicate edge {(parent, child)}")
        seen_edges.add((parent, child))
        children_of.setdefault(parent, []).append(child)

    used_edges = set()

    def _expand(fact_id: str, is_root: bool, path: frozenset[str]) -> TreeNode:
        if fact_id in path:
            raise IntegrityError(
                f"tree {tree_id!r}: fact {fact_id!r} repeats on a root-to-leaf path"
            )
        kids = children_of.get(fact_id, [])
        role = "hypothesis" if is_root else ("leaf" if not kids else "intermediate")
        node = TreeNode(fact_id=fact_id, role=role)
        for child_id in kids:
            used_edges.add((fact_id, child_id))
            node.children.append(_expand(child_id, False, path | {fact_id}))
        return node

    root = _expand(root_id, True, frozenset())
    unreachable = seen_edges - used_edges
    if unreachable:
        raise IntegrityError(
            f"tree {tree_id!r}: edges unreachable from root: {sorted(unreachable)}"
        )
    tree = EntailmentTree(id=tree_id, root=root, distractor_ids=list(distractor_ids))
    tree.validate()
    return tree


def extract_pairs(tree: EntailmentTree) -> list[tuple[str, str]]:
    """All (parent_id, child_id) edges in pre-order, without duplicates."""
    pairs: list[tuple[str, str]] = []
    seen: set[tuple[str, str]] = set()
    for node in tree.root.walk():
        for child in node.children:
            pair = (node.fact_id, child.fact_id)
            if pair not in seen:
                seen.add(pair)
                pairs.append(pair)
    return pairs


def jaccard_overlap(a: Fact, b: Fact) -> float:
    """Token-level Jaccard similarity; 1.0 when both token sets are empty."""
    sa, sb = a.token_set, b.token_set
    if not sa and not sb:
        return 1.0
    union = sa | sb
    if not union:
        return 1.0
    return len(sa & sb) / len(union)


@dataclass(frozen=True)
class TripletRecord:
    h_id: str
    pos_id: str
    neg_id: str
    provenance: str

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if self.pos_id == self.neg_id:
            raise IntegrityError(
                f"triplet for {self.h_id!r} has pos_id == neg_id ({self.pos_id!r})"
            )


class TripletStore:
    """(hypothesis, positive premise, negative distractor) records.

    Single-writer append; reading is safe from any number of threads.
    """

    def __init__(self, records: Iterable[TripletRecord] = (), round: int = 0):
        self.records: list[TripletRecord] = list(records)
        self.round = round

    def append(self, record: TripletRecord) -> None:
        self.records.append(record)

    def extend(self, records: Iterable[TripletRecord]) -> None:
        self.records.extend(records)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[TripletRecord]:
        return iter(self.records)

    def validate(self, corpus: Corpus) -> None:
        for rec in self.records:
            for fid in (rec.h_id, rec.pos_id, rec.neg_id):
                if fid not in corpus:
                    raise IntegrityError(f"triplet references unknown fact {fid!r}")

    def provenance_counts(self) -> dict[str, int]:
        counts = {p: 0 for p in PROVENANCES}
        for rec in self.records:
            counts[rec.provenance] += 1
        return counts

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for rec in self.records:
                fh.write(
                    json.dumps(
                        {
                            "h_id": rec.h_id,
                            "pos_id": rec.pos_id,
                            "neg_id": rec.neg_id,
                            "provenance": rec.provenance,
                        },
                        ensure_ascii=False,
                    )
                    + "\n"
                )

    @classmethod
    def load(cls, path: str) -> "TripletStore":
        records = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    records.append(
                        TripletRecord(
                            obj["h_id"], obj["pos_id"], obj["neg_id"], obj["provenance"]
                        )
                    )
                except (json.JSONDecodeError, KeyError) as exc:
                    raise ParseError(str(exc), line=lineno) from exc
        return cls(records)


def build_gold_triplets(
    trees: list[EntailmentTree],
    corpus: Optional[Corpus] = None,
    random_pool_size: int = 0,
    seed: int = 0,
) -> TripletStore:
    """One record per (parent-child pair x distractor of the owning tree).

    Trees without distractors fall back to a seeded random pool drawn from
    the corpus (excluding the tree's own facts); those records are tagged
    ``random`` instead of ``gold``.
    """
    rng = np.random.default_rng(seed)
    store = TripletStore()
    for tree in trees:
        pairs = extract_pairs(tree)
        if not pairs:
            continue
        negatives = [(d, "gold") for d in tree.distractor_ids]
        if not negatives and random_pool_size > 0:
            if corpus is None:
                raise ValueError(
                    f"tree {tree.id!r} has no distractors and no corpus was "
                    "given for the random pool"
                )
            tree_facts = tree.fact_ids()
            pool = [fid for fid in corpus.ids if fid not in tree_facts]
            if pool:
                take = min(random_pool_size, len(pool))
                picked = rng.choice(len(pool), size=take, replace=False)
                negatives = [(pool[i], "random") for i in sorted(picked)]
        for parent, child in pairs:
            for neg_id, provenance in negatives:
                if neg_id == child:
                    continue
                store.append(TripletRecord(parent, child, neg_id, provenance))
    return store


# ---------------------------------------------------------------------------
# Ingestion / serialization


def read_corpus(path: str) -> Corpus:
    corpus = Corpus()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                fact = Fact(str(obj["id"]), str(obj["text"]))
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ParseError(str(exc), line=lineno) from exc
            corpus.add(fact)
    return corpus


def write_corpus(path: str, corpus: Corpus) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for fact in corpus:
            fh.write(json.dumps({"id": fact.id, "text": fact.text}, ensure_ascii=False) + "\n")


def ingest_trees(
    path: str,
    format: str = "canonical",
    on_invalid: str = "raise",
) -> tuple[Corpus, list[EntailmentTree]]:
    """Read a tree file, returning the accumulated corpus and trees.

    ``format`` is ``canonical`` or ``entailment-bank``. ``on_invalid``
    controls handling of lines that parse but violate tree invariants:
    ``raise`` (default) or ``skip``.
    """
    if format == "canonical":
        line_reader = _read_canonical_line
    elif format == "entailment-bank":
        line_reader = _EBReader()
    else:
        raise ValueError(f"unknown tree format {format!r}")
    if on_invalid not in ("raise", "skip"):
        raise ValueError(f"on_invalid must be 'raise' or 'skip', got {on_invalid!r}")

    corpus = Corpus()
    trees: list[EntailmentTree] = []
    tree_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(str(exc), line=lineno) from exc
            try:
                tree = line_reader(obj, corpus)
            except IntegrityError:
                if on_invalid == "skip":
                    continue
                raise
            except KeyError as exc:
                raise ParseError(f"missing field {exc}", line=lineno) from exc
            if tree.id in tree_ids:
                raise IntegrityError(f"duplicate tree id {tree.id!r}")
            tree_ids.add(tree.id)
            trees.append(tree)
    return corpus, trees


def _read_canonical_line(obj: dict, corpus: Corpus) -> EntailmentTree:
    tree_id = str(obj["id"])
    local_ids = set()
    for f in obj["facts"]:
        corpus.add(Fact(str(f["id"]), str(f["text"])))
        local_ids.add(str(f["id"]))
    edges = [(str(p), str(c)) for p, c in obj["edges"]]
    root_id = str(obj["root"])
    distractors = [str(d) for d in obj.get("distractors", [])]
    for fid in {root_id, *distractors, *(x for e in edges for x in e)}:
        if fid not in corpus:
            raise IntegrityError(f"tree {tree_id!r} references missing fact {fid!r}")
    return build_tree(tree_id, root_id, edges, distractors)


class _EBReader:
    """Maps entailment-bank style records onto the canonical model.

    Facts are deduplicated by exact text across the whole file so the
    resulting corpus holds unique candidate premises; ids are assigned
    ``eb-<n>`` in first-seen order.
    """

    def __init__(self):
        self._text_to_id: dict[str, str] = {}

    def _global_id(self, text: str, corpus: Corpus) -> str:
        fid = self._text_to_id.get(text)
        if fid is None:
            fid = f"eb-{len(self._text_to_id) + 1}"
            self._text_to_id[text] = fid
            corpus.add(Fact(fid, text))
        return fid

    def __call__(self, obj: dict, corpus: Corpus) -> EntailmentTree:
        tree_id = str(obj["id"])
        meta = obj.get("meta", {})
        local_texts: dict[str, str] = {}
        for key, text in meta.get("triples", {}).items():
            local_texts[key] = str(text)
        for key, text in meta.get("intermediate_conclusions", {}).items():
            local_texts[key] = str(text)
        local_texts["hypothesis"] = str(obj["hypothesis"])

        def resolve(local: str) -> str:
            if local not in local_texts:
                raise IntegrityError(
                    f"tree {tree_id!r} references missing fact {local!r}"
                )
            return self._global_id(local_texts[local], corpus)

        edges: list[tuple[str, str]] = []
        proof = obj.get("proof", "")
        for step in proof.split(";"):
            step = step.strip()
            if not step or "->" not in step:
                continue
            lhs, rhs = step.split("->", 1)
            target = rhs.strip().split(":", 1)[0].strip()
            parent = resolve(target)
            for premise in lhs.split("&"):
                premise = premise.strip()
                if premise:
                    edges.append((parent, resolve(premise)))
        root_id = resolve("hypothesis")
        distractors = [resolve(d) for d in meta.get("distractors", [])]
        tree_fact_ids = {root_id, *(x for e in edges for x in e)}
        distractors = [d for d in distractors if d not in tree_fact_ids]
        return build_tree(tree_id, root_id, edges, distractors)


def write_trees(path: str, trees: list[EntailmentTree], corpus: Corpus) -> None:
    """Serialize trees in the canonical format (a round-trip fixed point)."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for tree in trees:
            fact_ids: list[str] = []
            seen: set[str] = set()
            for node in tree.root.walk():
                if node.fact_id not in seen:
                    seen.add(node.fact_id)
                    fact_ids.append(node.fact_id)
            for d in tree.distractor_ids:
                if d not in seen:
                    seen.add(d)
                    fact_ids.append(d)
            obj = {
                "id": tree.id,
                "facts": [
                    {"id": fid, "text": corpus.get(fid).text} for fid in fact_ids
                ],
                "edges": [[p, c] for p, c in extract_pairs(tree)],
                "root": tree.root.fact_id,
                "distractors": list(tree.distractor_ids),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")
