import json
import logging

import pytest

from entailkit.corpus import Corpus, Fact, ParseError, TripletRecord, TripletStore
from entailkit.index import build_index, retrieve_top_k
from entailkit.sampler import (
    GoldOracle,
    RecordedOracle,
    SamplePools,
    acs,
    ae_enc,
    append_annotation,
    compose_training_set,
    load_pools,
    pools_from_annotations,
    read_annotation_log,
    resample_iterative,
    save_pools,
    tree_hypotheses,
)

from conftest import make_stack


class PairOracle:
    """Hand-scripted verdicts for small scenarios."""

    def __init__(self, positive_pairs, max_depth=None):
        self.positive_pairs = set(positive_pairs)
        if max_depth is not None:
            self.max_depth = max_depth

    def explains(self, query_id, candidate_id):
        return (query_id, candidate_id) in self.positive_pairs


class ExplodingOracle:
    def explains(self, query_id, candidate_id):
        raise AssertionError("oracle must not be consulted")


def test_gold_oracle_edges_and_depth(lake_tree):
    oracle = GoldOracle([lake_tree])
    assert oracle.explains("H", "p1")
    assert not oracle.explains("H", "s1")
    assert not oracle.explains("p1", "H")
    # one edge plus the leaf's own judging round
    assert oracle.max_depth == 2


def test_acs_budget_one_matches_worked_example(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    oracle = GoldOracle([lake_tree])
    pos, neg = acs(
        lake_corpus.get("H"), lake_corpus, index, lake_stack, oracle, k=2, depth_budget=1
    )
    assert pos == {("H", "p1")}
    assert neg == {("H", "s1")}


def test_acs_budget_zero_is_inert(lake_corpus, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    pos, neg = acs(
        lake_corpus.get("H"),
        lake_corpus,
        index,
        lake_stack,
        ExplodingOracle(),
        k=2,
        depth_budget=0,
    )
    assert pos == set() and neg == set()


def test_acs_rejects_negative_budget(lake_corpus, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    with pytest.raises(ValueError):
        acs(
            lake_corpus.get("H"),
            lake_corpus,
            index,
            lake_stack,
            GoldOracle([]),
            k=2,
            depth_budget=-1,
        )


def test_acs_budget_two_recurses_into_positives(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    oracle = GoldOracle([lake_tree])
    pos, neg = acs(
        lake_corpus.get("H"), lake_corpus, index, lake_stack, oracle, k=2, depth_budget=2
    )
    # the accepted p1 gets its own judging round; all its candidates are
    # negatives because the gold tree stops at p1
    expect_neg = {("H", "s1")}
    for cand_id, _ in retrieve_top_k(index, lake_stack, lake_corpus.get("p1"), k=2):
        expect_neg.add(("p1", cand_id))
    assert pos == {("H", "p1")}
    assert neg == expect_neg


def test_acs_judges_every_retrieved_candidate(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    oracle = GoldOracle([lake_tree])
    pos, neg = acs(
        lake_corpus.get("H"), lake_corpus, index, lake_stack, oracle, k=4, depth_budget=1
    )
    retrieved = {
        fid for fid, _ in retrieve_top_k(index, lake_stack, lake_corpus.get("H"), k=4)
    }
    assert {p for _, p in pos} | {p for _, p in neg} == retrieved
    assert pos.isdisjoint(neg)


def test_acs_cycle_guard_terminates():
    corpus = Corpus(
        [
            Fact("a", "warm wind melted the snow pack"),
            Fact("b", "the snow pack got warm wind"),
            Fact("c", "warm snow wind near the pack"),
        ]
    )
    stack = make_stack(corpus)
    index = build_index(stack, corpus)
    oracle = PairOracle({("a", "b"), ("b", "a")})
    pos, neg = acs(corpus.get("a"), corpus, index, stack, oracle, k=2, depth_budget=10)
    # mutual endorsement must not loop: b is expanded once, a never re-expanded
    assert ("a", "b") in pos and ("b", "a") in pos
    assert all(q in {"a", "b"} for q, _ in pos | neg)


def test_ae_enc_defaults_budget_from_oracle(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    oracle = GoldOracle([lake_tree])
    hyps = tree_hypotheses([lake_tree], lake_corpus)
    assert [f.id for f in hyps] == ["H"]
    pools = ae_enc(hyps, lake_corpus, index, lake_stack, oracle, k=2)
    direct_pos, direct_neg = acs(
        lake_corpus.get("H"),
        lake_corpus,
        index,
        lake_stack,
        oracle,
        k=2,
        depth_budget=oracle.max_depth,
    )
    assert pools.positives == direct_pos
    assert pools.negatives == direct_neg
    assert pools.max_depth == oracle.max_depth


def test_ae_enc_rejects_empty_hypotheses(lake_corpus, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    with pytest.raises(ValueError):
        ae_enc([], lake_corpus, index, lake_stack, GoldOracle([]), k=2, depth_budget=1)


# -- annotation log -----------------------------------------------------------


def test_annotation_log_round_trip(tmp_path):
    path = str(tmp_path / "ann.jsonl")
    append_annotation(path, "H", "p1", "pos", session="s-0001")
    append_annotation(path, "H", "s1", "neg", session="s-0001")
    append_annotation(path, "H", "p1", "neg", session="s-0002")
    records = read_annotation_log(path)
    assert [r["candidate"] for r in records] == ["p1", "s1", "p1"]
    pools = pools_from_annotations(records)
    # the later neg verdict on (H, p1) wins
    assert pools.positives == set()
    assert pools.negatives == {("H", "p1"), ("H", "s1")}


def test_annotation_log_rejects_bad_lines(tmp_path):
    path = tmp_path / "ann.jsonl"
    good = {"query": "H", "candidate": "p1", "verdict": "pos", "ts": "t", "session": ""}
    path.write_text(json.dumps(good) + "\n" + "{not json\n")
    with pytest.raises(ParseError) as exc:
        read_annotation_log(str(path))
    assert exc.value.line == 2

    bad_key = dict(good)
    del bad_key["ts"]
    path.write_text(json.dumps(bad_key) + "\n")
    with pytest.raises(ParseError) as exc:
        read_annotation_log(str(path))
    assert exc.value.line == 1

    bad_verdict = dict(good, verdict="maybe")
    path.write_text(json.dumps(bad_verdict) + "\n")
    with pytest.raises(ParseError):
        read_annotation_log(str(path))


def test_recorded_oracle_logs_and_replays(tmp_path):
    path = str(tmp_path / "ann.jsonl")
    oracle = RecordedOracle(log_path=path)
    oracle.record("H", "p1", "pos", session="s-0001")
    oracle.record("H", "s1", "neg", session="s-0001")
    assert oracle.explains("H", "p1")
    assert not oracle.explains("H", "s1")
    assert oracle.has_verdict("H", "p1")
    assert not oracle.has_verdict("H", "p2")
    with pytest.raises(LookupError):
        oracle.explains("H", "p2")
    with pytest.raises(ValueError):
        oracle.record("H", "p2", "maybe")

    replayed = RecordedOracle.replay(path)
    assert replayed.verdicts == oracle.verdicts
    assert replayed.pools().to_json() == oracle.pools().to_json()


# -- pools --------------------------------------------------------------------


def test_pools_eviction_keeps_sides_disjoint():
    pools = SamplePools()
    pools.add("H", "p1", positive=True)
    pools.add("H", "p1", positive=False)
    assert pools.positives == set()
    assert pools.negatives == {("H", "p1")}
    pools.add("H", "p1", positive=True)
    assert pools.negatives == set()
    pools.validate()
    assert pools.counts() == {"positives": 1, "negatives": 0}


def test_pools_absorb_gives_incoming_precedence():
    base = SamplePools(positives={("H", "p1")}, negatives={("H", "s1")})
    update = SamplePools(positives={("H", "s1")}, negatives={("H", "p2")})
    base.absorb(update)
    assert base.positives == {("H", "p1"), ("H", "s1")}
    assert base.negatives == {("H", "p2")}


def test_pools_canonical_json_is_order_independent(tmp_path):
    a = SamplePools(round=3, max_depth=2)
    b = SamplePools(round=3, max_depth=2)
    pairs = [("H", "p1"), ("H", "p2"), ("q", "z")]
    for pair in pairs:
        a.add(*pair, positive=True)
    for pair in reversed(pairs):
        b.add(*pair, positive=True)
    a.add("H", "s1", positive=False)
    b.add("H", "s1", positive=False)
    assert a.to_json() == b.to_json()

    restored = SamplePools.from_json(a.to_json())
    assert restored.positives == a.positives
    assert restored.negatives == a.negatives
    assert restored.round == 3 and restored.max_depth == 2

    path = str(tmp_path / "pools.json")
    save_pools(a, path)
    assert load_pools(path).to_json() == a.to_json()


def test_pools_query_accessors_sorted():
    pools = SamplePools()
    pools.add("H", "z", positive=False)
    pools.add("H", "a", positive=False)
    pools.add("H", "m", positive=True)
    pools.add("other", "x", positive=False)
    assert pools.negatives_for("H") == ["a", "z"]
    assert pools.positives_for("H") == ["m"]


# -- composing training sets --------------------------------------------------


def pools_and_gold():
    pools = SamplePools(
        positives={("H", "p1")},
        negatives={("H", "n1"), ("H", "n2"), ("H", "n3"), ("H", "n4")},
    )
    gold = TripletStore(
        [
            TripletRecord("H", "p1", "d1", "random"),
            TripletRecord("H", "p1", "d2", "random"),
            TripletRecord("H", "p1", "d3", "random"),
            TripletRecord("H", "p1", "d4", "random"),
        ]
    )
    return pools, gold


def test_compose_mix_extremes():
    pools, gold = pools_and_gold()
    all_active = compose_training_set(pools, gold, mix_ratio=1.0, negatives_per_positive=4)
    assert len(all_active.records) == 4
    assert {r.provenance for r in all_active.records} == {"active"}
    assert {r.neg_id for r in all_active.records} == {"n1", "n2", "n3", "n4"}

    no_active = compose_training_set(pools, gold, mix_ratio=0.0, negatives_per_positive=4)
    assert len(no_active.records) == 4
    assert {r.provenance for r in no_active.records} == {"random"}


def test_compose_balanced_mix_counts():
    pools, gold = pools_and_gold()
    out = compose_training_set(
        pools, gold, mix_ratio=0.5, negatives_per_positive=4, seed=11
    )
    assert len(out.records) == 4
    by_prov = {}
    for rec in out.records:
        by_prov[rec.provenance] = by_prov.get(rec.provenance, 0) + 1
    assert by_prov == {"active": 2, "random": 2}


def test_compose_falls_back_when_no_actives(caplog):
    pools = SamplePools(positives={("H", "p1")})
    _, gold = pools_and_gold()
    with caplog.at_level(logging.WARNING, logger="entailkit.sampler"):
        out = compose_training_set(pools, gold, mix_ratio=1.0, negatives_per_positive=2)
    assert {r.provenance for r in out.records} == {"random"}
    assert any("no active negatives" in rec.message for rec in caplog.records)


def test_compose_rejects_bad_arguments():
    pools, gold = pools_and_gold()
    with pytest.raises(ValueError):
        compose_training_set(pools, gold, mix_ratio=1.5)
    with pytest.raises(ValueError):
        compose_training_set(pools, gold, mix_ratio=0.5, negatives_per_positive=0)


def test_compose_deterministic_per_seed():
    pools, gold = pools_and_gold()
    a = compose_training_set(pools, gold, 0.5, 4, seed=3)
    b = compose_training_set(pools, gold, 0.5, 4, seed=3)
    assert [
        (r.h_id, r.pos_id, r.neg_id, r.provenance) for r in a.records
    ] == [(r.h_id, r.pos_id, r.neg_id, r.provenance) for r in b.records]


# -- iterative resampling -----------------------------------------------------


def test_resample_frozen_model_is_stationary(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    oracle = GoldOracle([lake_tree])
    hyps = tree_hypotheses([lake_tree], lake_corpus)
    snaps = resample_iterative(
        hyps, lake_corpus, index, lake_stack, oracle, k=2, rounds=3
    )
    assert [s.round for s in snaps] == [1, 2, 3]
    first = snaps[0]
    for snap in snaps[1:]:
        assert snap.positives == first.positives
        assert snap.negatives == first.negatives


def test_resample_accumulates_monotonically(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    oracle = GoldOracle([lake_tree])
    hyps = tree_hypotheses([lake_tree], lake_corpus)
    snaps = resample_iterative(
        hyps, lake_corpus, index, lake_stack, oracle, k=2, rounds=3, accumulate=True
    )
    for earlier, later in zip(snaps, snaps[1:]):
        assert earlier.positives <= later.positives
        assert earlier.negatives | later.negatives == later.negatives | earlier.negatives


def test_resample_rejects_zero_rounds(lake_corpus, lake_tree, lake_stack):
    index = build_index(lake_stack, lake_corpus)
    with pytest.raises(ValueError):
        resample_iterative(
            tree_hypotheses([lake_tree], lake_corpus),
            lake_corpus,
            index,
            lake_stack,
            GoldOracle([lake_tree]),
            k=2,
            rounds=0,
        )
