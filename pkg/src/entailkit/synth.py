"""Synthetic benchmark with a planted similarity bias.

Every tree surrounds its hypothesis with four kinds of gold children and a
set of traps. Two easy premises share several topic words with the
hypothesis and carry an explanation marker; one hard premise shares almost
no topic words but is marked; one look-alike premise shares topic words
without any marker. Four spurious facts share more topic words than any
gold premise yet explain nothing, so a plain lexical ranker puts them on
top. Markers are drawn from a tiny shared vocabulary while topics vary per
tree, which is what lets a fine-tuned model generalize to held-out trees:
weighing markers up transfers, memorizing topic words does not.

Distractor lists deliberately exclude the spurious facts. Random negative
sampling therefore never trains against them; only the active sampler
finds them, because they sit at the top of the ranking.
"""

from __future__ import annotations

import os
import random
from dataclasses import dataclass

from .corpus import Corpus, EntailmentTree, Fact, build_tree, write_corpus, write_trees

N_TRAIN = 30
N_TEST = 12
N_FILLERS = 200
N_TOPICS = 40
N_NOISE = 240
_NOISE_BASE = 200

FUNC_TOKENS = ("the", "of", "and", "is", "to", "in")
MARKER_TOKENS = ("because", "therefore", "hence", "implies")
LURE_TOKENS = (
    "notably", "famously", "surprisingly", "reportedly",
    "allegedly", "supposedly", "apparently", "seemingly",
)
HYP_TOKEN = "whether"

_SYLLABLES = (
    "ba", "de", "fi", "go", "hu", "ka", "lem", "mo", "na", "pe",
    "qui", "ro", "sa", "tu", "ve", "wo", "xi", "yu", "za", "chi",
)


def _word(i: int) -> str:
    # three base-20 digits -> unique pronounceable token
    a, rest = divmod(i, 400)
    b, c = divmod(rest, 20)
    return _SYLLABLES[a] + _SYLLABLES[b] + _SYLLABLES[c]


TOPIC_POOL = tuple(_word(i) for i in range(N_TOPICS))
NOISE_POOL = tuple(_word(_NOISE_BASE + i) for i in range(N_NOISE))


@dataclass
class SynthDataset:
    corpus: Corpus
    train_trees: list[EntailmentTree]
    test_trees: list[EntailmentTree]


def _sentence(rng: random.Random, *parts: list[str]) -> str:
    tokens = [t for part in parts for t in part]
    rng.shuffle(tokens)
    return " ".join(tokens)


def _make_tree(
    rng: random.Random, tree_id: str, corpus: Corpus, filler_ids: list[str]
) -> EntailmentTree:
    topics = rng.sample(TOPIC_POOL, 5)
    noise = lambda n: rng.sample(NOISE_POOL, n)
    func = lambda n: rng.sample(FUNC_TOKENS, n)
    mark = lambda: rng.sample(MARKER_TOKENS, 2)

    hid = f"{tree_id}-h"
    corpus.add(Fact(hid, _sentence(rng, [HYP_TOKEN], func(2), topics, noise(1))))

    easy1, easy2 = f"{tree_id}-e1", f"{tree_id}-e2"
    corpus.add(Fact(easy1, _sentence(rng, func(1), topics[0:3], mark(), noise(1))))
    corpus.add(Fact(easy2, _sentence(rng, func(1), topics[2:5], mark(), noise(1))))
    hard = f"{tree_id}-hard"
    corpus.add(Fact(hard, _sentence(rng, func(1), mark(), noise(3))))
    sim = f"{tree_id}-sim"
    corpus.add(Fact(sim, _sentence(rng, func(1), [topics[1], topics[3], topics[4]], noise(2))))

    # the sub-branch under easy1 gives the sampler something to recurse into;
    # its premises are plain statements with no explanatory connective
    sub1, sub2 = f"{tree_id}-e1a", f"{tree_id}-e1b"
    corpus.add(Fact(sub1, _sentence(rng, func(1), topics[0:2], noise(3))))
    corpus.add(Fact(sub2, _sentence(rng, func(1), topics[1:3], noise(3))))

    # spurious: more topic overlap than any gold child plus a sensational
    # style no explanatory premise uses, and not gold for any tree
    for i in range(4):
        four = [t for j, t in enumerate(topics) if j != i][:4]
        lures = rng.sample(LURE_TOKENS, 4)
        corpus.add(Fact(f"{tree_id}-x{i + 1}", _sentence(rng, func(1), four, lures)))

    edges = [
        (hid, easy1),
        (hid, easy2),
        (hid, hard),
        (hid, sim),
        (easy1, sub1),
        (easy1, sub2),
    ]
    distractors = rng.sample(filler_ids, 6)
    return build_tree(tree_id, hid, edges, distractors)


def generate_biased_dataset(
    seed: int = 0,
    n_train: int = N_TRAIN,
    n_test: int = N_TEST,
    n_fillers: int = N_FILLERS,
) -> SynthDataset:
    """Build the benchmark corpus and its train/test trees, fully seeded."""
    rng = random.Random(seed)
    corpus = Corpus()
    filler_ids = []
    for i in range(n_fillers):
        fid = f"fill-{i:03d}"
        text = _sentence(
            rng,
            rng.sample(FUNC_TOKENS, 1),
            rng.sample(TOPIC_POOL, 1),
            rng.sample(NOISE_POOL, 4),
        )
        corpus.add(Fact(fid, text))
        filler_ids.append(fid)
    train = [
        _make_tree(rng, f"train-{i:02d}", corpus, filler_ids) for i in range(n_train)
    ]
    test = [_make_tree(rng, f"test-{i:02d}", corpus, filler_ids) for i in range(n_test)]
    return SynthDataset(corpus=corpus, train_trees=train, test_trees=test)


def save_dataset(dataset: SynthDataset, out_dir: str) -> dict[str, str]:
    """Write corpus.jsonl, train.jsonl, and test.jsonl under out_dir."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {
        "corpus": os.path.join(out_dir, "corpus.jsonl"),
        "train": os.path.join(out_dir, "train.jsonl"),
        "test": os.path.join(out_dir, "test.jsonl"),
    }
    write_corpus(paths["corpus"], dataset.corpus)
    write_trees(paths["train"], dataset.train_trees, dataset.corpus)
    write_trees(paths["test"], dataset.test_trees, dataset.corpus)
    return paths
