import json

import pytest

from entailkit.cli import main
from entailkit.corpus import TripletStore
from entailkit.sampler import load_pools


def run(argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    code = run(
        ["synth", "--preset", "biased", "--seed", 4, "--n-train", 2, "--n-test", 1,
         "--n-fillers", 30, "--out-dir", out]
    )
    assert code == 0
    return out


def test_synth_is_byte_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert run(
            ["synth", "--preset", "biased", "--seed", 7, "--n-train", 2, "--n-test", 1,
             "--n-fillers", 20, "--out-dir", out]
        ) == 0
    for name in ("corpus.jsonl", "train.jsonl", "test.jsonl"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_synth_unknown_preset_is_data_error(tmp_path, capsys):
    assert run(["synth", "--preset", "easy", "--out-dir", tmp_path / "x"]) == 1
    assert "error:" in capsys.readouterr().err


def test_ingest_reaches_fixed_point(dataset_dir, tmp_path):
    first_corpus = tmp_path / "c1.jsonl"
    first_trees = tmp_path / "t1.jsonl"
    assert run(
        ["ingest", "--trees", dataset_dir / "train.jsonl",
         "--out-corpus", first_corpus, "--out-trees", first_trees]
    ) == 0
    second_corpus = tmp_path / "c2.jsonl"
    second_trees = tmp_path / "t2.jsonl"
    assert run(
        ["ingest", "--trees", first_trees,
         "--out-corpus", second_corpus, "--out-trees", second_trees]
    ) == 0
    assert first_trees.read_bytes() == second_trees.read_bytes()


def test_encode_then_index(dataset_dir, tmp_path):
    vectors = tmp_path / "vecs.emb"
    ids = tmp_path / "ids.txt"
    assert run(
        ["encode", "--corpus", dataset_dir / "corpus.jsonl", "--backend", "tfidf",
         "--out-vectors", vectors, "--out-ids", ids]
    ) == 0
    assert vectors.exists() and ids.exists()

    stats_path = tmp_path / "index.json"
    assert run(
        ["index", "--corpus", dataset_dir / "corpus.jsonl", "--out", stats_path]
    ) == 0
    stats = json.loads(stats_path.read_text())
    n_ids = len(ids.read_text().splitlines())
    assert stats["entries"] == n_ids
    assert stats["generation"] == 0
    assert stats["zero_rows"] == []

    # the imported matrix round-trips through the index path too
    stats2 = tmp_path / "index2.json"
    assert run(
        ["index", "--corpus", dataset_dir / "corpus.jsonl", "--backend", "import",
         "--vectors", vectors, "--ids", ids, "--out", stats2]
    ) == 0
    assert json.loads(stats2.read_text())["entries"] == n_ids


def test_pairs_and_triplets(dataset_dir, tmp_path):
    pairs_path = tmp_path / "pairs.jsonl"
    assert run(["pairs", "--trees", dataset_dir / "train.jsonl", "--out", pairs_path]) == 0
    lines = [json.loads(l) for l in pairs_path.read_text().splitlines()]
    # two trees, six edges each: root to four children plus two sub-premises
    assert len(lines) == 12
    assert {"tree", "parent", "child"} == set(lines[0])

    trip_path = tmp_path / "triplets.jsonl"
    assert run(
        ["triplets", "--trees", dataset_dir / "train.jsonl", "--seed", 3,
         "--out", trip_path]
    ) == 0
    store = TripletStore.load(str(trip_path))
    # six distractors per tree
    assert len(store.records) == 12 * 6
    assert {r.provenance for r in store.records} == {"gold"}


def test_sample_ae_enc_and_acs(dataset_dir, tmp_path):
    out = tmp_path / "pools.json"
    assert run(
        ["sample", "--trees", dataset_dir / "train.jsonl",
         "--corpus", dataset_dir / "corpus.jsonl", "--k", 8, "--out", out]
    ) == 0
    pools = load_pools(str(out))
    assert pools.positives and pools.negatives
    assert pools.max_depth == 3

    acs_out = tmp_path / "acs.json"
    assert run(
        ["sample", "--trees", dataset_dir / "train.jsonl",
         "--corpus", dataset_dir / "corpus.jsonl", "--mode", "acs",
         "--query", "train-00-h", "--k", 8, "--out", acs_out]
    ) == 0
    acs_pools = load_pools(str(acs_out))
    assert all(q == "train-00-h" or not q.endswith("-h") for q, _ in acs_pools.positives)

    # acs without --query is a data error, not a crash
    assert run(
        ["sample", "--trees", dataset_dir / "train.jsonl", "--mode", "acs",
         "--out", tmp_path / "no.json"]
    ) == 1


def test_sample_rounds_accumulate(dataset_dir, tmp_path):
    one = tmp_path / "r1.json"
    three = tmp_path / "r3.json"
    base = ["sample", "--trees", dataset_dir / "train.jsonl",
            "--corpus", dataset_dir / "corpus.jsonl", "--k", 6]
    assert run(base + ["--rounds", 1, "--out", one]) == 0
    assert run(base + ["--rounds", 3, "--out", three]) == 0
    p1, p3 = load_pools(str(one)), load_pools(str(three))
    assert p1.positives <= p3.positives
    assert p3.round == 3


def test_train_zero_lr_keeps_eval_identical(dataset_dir, tmp_path):
    trip_path = tmp_path / "triplets.jsonl"
    assert run(
        ["triplets", "--trees", dataset_dir / "train.jsonl", "--out", trip_path]
    ) == 0

    adapter = tmp_path / "adapter.npz"
    report = tmp_path / "report.json"
    assert run(
        ["train", "--corpus", dataset_dir / "corpus.jsonl", "--triplets", trip_path,
         "--lr", 0, "--epochs", 2, "--out-adapter-query", adapter,
         "--report", report]
    ) == 0
    assert json.loads(report.read_text())["epoch_losses"]

    base_eval = tmp_path / "eval-base.json"
    tuned_eval = tmp_path / "eval-tuned.json"
    common = ["eval", "--trees", dataset_dir / "test.jsonl",
              "--corpus", dataset_dir / "corpus.jsonl", "--exclude-self",
              "--k-list", "10,20,30,40,50"]
    assert run(common + ["--out", base_eval]) == 0
    assert run(common + ["--adapter-query", adapter, "--out", tuned_eval]) == 0
    assert json.loads(base_eval.read_text()) == json.loads(tuned_eval.read_text())


def test_eval_reports_requested_k_columns(dataset_dir, tmp_path):
    out = tmp_path / "eval.json"
    assert run(
        ["eval", "--trees", dataset_dir / "test.jsonl",
         "--corpus", dataset_dir / "corpus.jsonl",
         "--k-list", "10,20,30,40,50", "--out", out]
    ) == 0
    payload = json.loads(out.read_text())
    assert set(payload["ndcg_at"]) == {"10", "20", "30", "40", "50"}
    assert 0.0 <= payload["map"] <= 1.0


def test_bias_report_writes_csv_and_summary(dataset_dir, tmp_path):
    csv_path = tmp_path / "bias.csv"
    summary_path = tmp_path / "bias.json"
    assert run(
        ["bias-report", "--trees", dataset_dir / "test.jsonl",
         "--corpus", dataset_dir / "corpus.jsonl", "--k", 10,
         "--out-csv", csv_path, "--out-summary", summary_path]
    ) == 0
    lines = csv_path.read_text().strip().splitlines()
    assert lines[0] == "group,measure,bin_lo,bin_hi,count"
    assert len(lines) == 1 + 3 * 2 * 20
    summary = json.loads(summary_path.read_text())
    assert "tp.jaccard" in summary and "fp.cosine" in summary


def test_config_file_sets_defaults_flags_win(dataset_dir, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"seed": 9, "n-train": 2, "n-test": 1,
                                         "n-fillers": 20}}))
    from_cfg = tmp_path / "from-cfg"
    assert run(
        ["--config", cfg, "synth", "--preset", "biased", "--out-dir", from_cfg]
    ) == 0
    direct = tmp_path / "direct"
    assert run(
        ["synth", "--preset", "biased", "--seed", 9, "--n-train", 2, "--n-test", 1,
         "--n-fillers", 20, "--out-dir", direct]
    ) == 0
    assert (from_cfg / "corpus.jsonl").read_bytes() == (direct / "corpus.jsonl").read_bytes()

    overridden = tmp_path / "override"
    assert run(
        ["--config", cfg, "synth", "--preset", "biased", "--seed", 1,
         "--out-dir", overridden]
    ) == 0
    assert (overridden / "corpus.jsonl").read_bytes() != (direct / "corpus.jsonl").read_bytes()


def test_config_rejects_unknown_keys(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"synth": {"bogus": 1}}))
    assert run(["--config", cfg, "synth", "--preset", "biased",
                "--out-dir", tmp_path / "x"]) == 1
    assert "unknown keys" in capsys.readouterr().err


def test_usage_errors_exit_two(dataset_dir, tmp_path):
    with pytest.raises(SystemExit) as exc:
        run(["no-such-command"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        run(["eval", "--trees", dataset_dir / "test.jsonl"])  # missing --out
    assert exc.value.code == 2


def test_missing_input_is_data_error(tmp_path, capsys):
    assert run(
        ["eval", "--trees", tmp_path / "absent.jsonl", "--out", tmp_path / "o.json"]
    ) == 1
    err = capsys.readouterr().err
    assert err.startswith("error:")
