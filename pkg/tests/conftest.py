import pytest

from entailkit.corpus import Corpus, Fact, build_tree
from entailkit.encoder import EncoderStack, TfidfProvider


LAKE_FACTS = [
    ("H", "the lake froze because the air stayed cold"),
    ("p1", "the air stayed cold for a week"),
    ("s1", "the lake froze last winter too"),
    ("p2", "ducks fly south in autumn"),
    ("p3", "granite is an igneous rock"),
]


def lake_corpus_factory() -> Corpus:
    """Five facts where p1 explains H and s1 merely resembles it."""
    return Corpus(Fact(fid, text) for fid, text in LAKE_FACTS)


def lake_tree_factory():
    return build_tree("t-lake", "H", [("H", "p1")])


@pytest.fixture
def lake_corpus() -> Corpus:
    return lake_corpus_factory()


@pytest.fixture
def lake_tree(lake_corpus):
    return lake_tree_factory()


@pytest.fixture
def lake_stack(lake_corpus) -> EncoderStack:
    return EncoderStack(TfidfProvider(lake_corpus), mode="single")


def make_stack(corpus: Corpus, mode: str = "single") -> EncoderStack:
    return EncoderStack(TfidfProvider(corpus), mode=mode)
