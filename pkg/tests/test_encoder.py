import math
import warnings

import numpy as np
import pytest
from hypothesis import given, strategies as st

from entailkit.corpus import Corpus, Fact
from entailkit.encoder import (
    Adapter,
    EmbeddingLoadError,
    EmbeddingMatrix,
    EncoderStack,
    MatrixProvider,
    TfidfProvider,
    ZeroVectorWarning,
    cosine_score,
    load_adapter,
    load_embeddings,
    save_adapter,
    save_embeddings,
    tfidf_encode,
)


# hand-computed tf-idf oracle for a 2-document corpus
#   doc a: "cold cold air", doc b: "cold water"
#   vocabulary (lexicographic): air, cold, water
#   idf(t) = ln((1+2)/(1+df)) + 1: air/water df=1 -> ln(1.5)+1; cold df=2 -> ln(1)+1 = 1
def test_tfidf_matches_hand_computation():
    corpus = Corpus([Fact("a", "cold cold air"), Fact("b", "cold water")])
    provider = TfidfProvider(corpus)
    assert list(provider.vocabulary) == ["air", "cold", "water"]
    idf_rare = math.log(1.5) + 1.0
    raw_a = np.array([idf_rare, 2.0, 0.0])
    raw_b = np.array([0.0, 1.0, idf_rare])
    expect_a = raw_a / np.linalg.norm(raw_a)
    expect_b = raw_b / np.linalg.norm(raw_b)
    np.testing.assert_allclose(provider.vector(corpus.get("a")), expect_a, atol=1e-12)
    np.testing.assert_allclose(provider.vector(corpus.get("b")), expect_b, atol=1e-12)


def test_tfidf_rows_are_unit_norm():
    corpus = Corpus([Fact(str(i), f"word{i} shared") for i in range(6)])
    matrix = tfidf_encode(corpus)
    norms = np.linalg.norm(matrix.rows, axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-12)


def test_tfidf_encodes_unseen_text_with_frozen_vocabulary():
    corpus = Corpus([Fact("a", "cold air"), Fact("b", "warm water")])
    provider = TfidfProvider(corpus)
    vec = provider.encode_text("cold water totally-unseen-token")
    assert vec.shape == (provider.dim,)
    assert np.linalg.norm(vec) > 0
    # a text of only unseen tokens has nothing to land on
    assert np.linalg.norm(provider.encode_text("zz yy xx")) == 0.0


def test_cosine_score_worked_example():
    u = np.array([1.0, 2.0, 3.0])
    v = np.array([4.0, 5.0, 6.0])
    expect = 32.0 / (math.sqrt(14.0) * math.sqrt(77.0))
    assert cosine_score(u, v) == pytest.approx(expect, abs=1e-12)
    assert expect == pytest.approx(0.9746318, abs=1e-6)


def test_cosine_score_zero_vector_warns_and_returns_zero():
    with pytest.warns(ZeroVectorWarning):
        assert cosine_score(np.zeros(3), np.ones(3)) == 0.0


def test_identity_adapter_returns_input_object():
    a = Adapter(4)
    vec = np.arange(4.0)
    assert a.apply(vec) is vec


def test_adapter_set_weights_validates():
    a = Adapter(3)
    with pytest.raises(ValueError):
        a.set_weights(np.eye(4))
    with pytest.raises(ValueError):
        a.set_weights(np.full((3, 3), np.nan))


def test_frozen_adapter_rejects_updates():
    a = Adapter(3, trainable=False)
    with pytest.raises(ValueError):
        a.add_scaled(np.eye(3), 0.1)


def test_adapter_add_scaled_is_plain_accumulation():
    a = Adapter(2)
    a.add_scaled(np.array([[1.0, 0.0], [0.0, 2.0]]), -0.5)
    np.testing.assert_allclose(a.weights, [[0.5, 0.0], [0.0, 0.0]])
    assert not a.is_identity


def test_adapter_file_round_trip(tmp_path):
    a = Adapter(3)
    a.add_scaled(np.ones((3, 3)), 0.25)
    path = tmp_path / "q.adapt"
    save_adapter(a, str(path))
    b = load_adapter(str(path))
    np.testing.assert_array_equal(a.weights, b.weights)


def test_embedding_file_round_trip(tmp_path):
    matrix = EmbeddingMatrix(ids=("a", "b"), rows=np.array([[1.0, 2.0], [3.0, 4.5]]))
    save_embeddings(matrix, str(tmp_path / "v.emb"), str(tmp_path / "v.ids"))
    loaded = load_embeddings(str(tmp_path / "v.emb"), str(tmp_path / "v.ids"))
    assert loaded.ids == ("a", "b")
    np.testing.assert_array_equal(loaded.rows, matrix.rows)


def test_load_embeddings_rejects_count_mismatch(tmp_path):
    (tmp_path / "v.emb").write_text("EMB v1 2 2\n1 2\n3 4\n", encoding="utf-8")
    (tmp_path / "v.ids").write_text("a\n", encoding="utf-8")
    with pytest.raises(EmbeddingLoadError):
        load_embeddings(str(tmp_path / "v.emb"), str(tmp_path / "v.ids"))


def test_load_embeddings_rejects_bad_header(tmp_path):
    (tmp_path / "v.emb").write_text("EMB v9 1 2\n1 2\n", encoding="utf-8")
    (tmp_path / "v.ids").write_text("a\n", encoding="utf-8")
    with pytest.raises(EmbeddingLoadError):
        load_embeddings(str(tmp_path / "v.emb"), str(tmp_path / "v.ids"))


def test_matrix_provider_rejects_unknown_fact():
    provider = MatrixProvider(EmbeddingMatrix(ids=("a",), rows=np.eye(1)))
    with pytest.raises(LookupError):
        provider.vector(Fact("zz", "unknown"))
    with pytest.raises(LookupError):
        provider.encode_text("anything")


def test_stack_modes_share_or_split_adapters():
    corpus = Corpus([Fact("a", "one two"), Fact("b", "two three")])
    base = TfidfProvider(corpus)
    single = EncoderStack(base, "single")
    assert list(single.trainable_parameters()) == ["query"]
    assert not single.premise_adapter.trainable

    siamese = EncoderStack(base, "siamese")
    assert siamese.query_adapter is siamese.premise_adapter
    assert list(siamese.trainable_parameters()) == ["shared"]

    dual = EncoderStack(base, "dual")
    assert dual.query_adapter is not dual.premise_adapter
    assert list(dual.trainable_parameters()) == ["query", "premise"]

    with pytest.raises(ValueError):
        EncoderStack(base, "triple")


def test_stack_copy_detaches_weights_but_keeps_sharing():
    corpus = Corpus([Fact("a", "one two"), Fact("b", "two three")])
    stack = EncoderStack(TfidfProvider(corpus), "siamese")
    clone = stack.copy()
    clone.query_adapter.add_scaled(np.eye(stack.dim), 0.1)
    assert stack.query_adapter.is_identity
    assert clone.query_adapter is clone.premise_adapter


def test_encode_sides_route_through_the_right_adapter():
    corpus = Corpus([Fact("a", "one two"), Fact("b", "two three")])
    stack = EncoderStack(TfidfProvider(corpus), "dual")
    fact = corpus.get("a")
    base_vec = stack.base_vector(fact)
    stack.query_adapter.set_weights(np.eye(stack.dim) * 2.0)
    np.testing.assert_allclose(stack.encode(fact, "query"), 2.0 * base_vec)
    np.testing.assert_array_equal(stack.encode(fact, "premise"), base_vec)
    np.testing.assert_array_equal(stack.encode(fact, "fixed"), base_vec)
    with pytest.raises(ValueError):
        stack.encode(fact, "sideways")


@given(st.integers(min_value=1, max_value=6), st.integers(min_value=0, max_value=2**32 - 1))
def test_cosine_is_scale_invariant(dim, seed):
    rng = np.random.default_rng(seed)
    u = rng.normal(size=dim)
    v = rng.normal(size=dim)
    if np.linalg.norm(u) == 0 or np.linalg.norm(v) == 0:
        return
    with warnings.catch_warnings():
        warnings.simplefilter("error", ZeroVectorWarning)
        assert cosine_score(3.5 * u, v) == pytest.approx(cosine_score(u, v), abs=1e-9)
        assert -1.0 - 1e-12 <= cosine_score(u, v) <= 1.0 + 1e-12
