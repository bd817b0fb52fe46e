"""Batch command-line driver for every pipeline stage.

Options resolve in three layers: built-in defaults, then a JSON config file
(``--config``, keyed by subcommand), then explicit flags. Flags win.

Exit codes: 0 success, 1 data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from typing import Optional, Sequence

from .corpus import (
    ParseError,
    build_gold_triplets,
    extract_pairs,
    ingest_trees,
    read_corpus,
    write_corpus,
    write_trees,
)
from .corpus import IntegrityError, TripletStore
from .encoder import (
    EmbeddingLoadError,
    EncoderStack,
    MatrixProvider,
    TfidfProvider,
    load_adapter,
    load_embeddings,
    save_adapter,
    save_embeddings,
    tfidf_encode,
)
from .evaluator import (
    DEFAULT_K_LIST,
    bias_report,
    classify_pairs,
    evaluate_trees,
)
from .index import build_index
from .sampler import (
    GoldOracle,
    SamplePools,
    acs,
    ae_enc,
    resample_iterative,
    save_pools,
    tree_hypotheses,
)
from .synth import generate_biased_dataset, save_dataset
from .trainer import TrainConfig, fine_tune, save_report

DATA_ERRORS = (
    ParseError,
    IntegrityError,
    EmbeddingLoadError,
    OSError,
    ValueError,
    LookupError,
    KeyError,
)


def _add_backend_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--backend", choices=("tfidf", "import"), default="tfidf")
    sub.add_argument("--vectors", help="embedding matrix file (import backend)")
    sub.add_argument("--ids", help="embedding ids file (import backend)")


def _add_adapter_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--mode", choices=("single", "siamese", "dual"), default="single")
    sub.add_argument("--adapter-query", help="saved query adapter to load")
    sub.add_argument("--adapter-premise", help="saved premise adapter to load")


def _load_stack(args: argparse.Namespace, corpus) -> EncoderStack:
    if args.backend == "tfidf":
        base = TfidfProvider(corpus)
    else:
        if not args.vectors or not args.ids:
            raise ValueError("import backend needs --vectors and --ids")
        base = MatrixProvider(load_embeddings(args.vectors, args.ids))
    stack = EncoderStack(base, getattr(args, "mode", "single"))
    query_path = getattr(args, "adapter_query", None)
    premise_path = getattr(args, "adapter_premise", None)
    if query_path:
        stack.query_adapter.set_weights(load_adapter(query_path).weights)
    if premise_path:
        if stack.mode == "single":
            raise ValueError("single mode has a frozen premise side; drop --adapter-premise")
        if stack.mode == "siamese" and query_path:
            raise ValueError("siamese mode shares one adapter; pass only --adapter-query")
        stack.premise_adapter.set_weights(load_adapter(premise_path).weights)
    return stack


def _parse_k_list(text: str) -> tuple[int, ...]:
    try:
        ks = tuple(int(part) for part in text.split(",") if part.strip())
    except ValueError:
        raise ValueError(f"bad --k-list {text!r}; expected comma-separated integers")
    if not ks or any(k < 1 for k in ks):
        raise ValueError(f"bad --k-list {text!r}; entries must be >= 1")
    return ks


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- subcommand bodies ------------------------------------------------------


def cmd_ingest(args: argparse.Namespace) -> int:
    corpus, trees = ingest_trees(args.trees, args.format)
    write_corpus(args.out_corpus, corpus)
    write_trees(args.out_trees, trees, corpus)
    print(f"ingested {len(corpus)} facts, {len(trees)} trees")
    return 0


def cmd_encode(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    if args.backend == "tfidf":
        matrix = tfidf_encode(corpus)
    else:
        if not args.vectors or not args.ids:
            raise ValueError("import backend needs --vectors and --ids")
        matrix = load_embeddings(args.vectors, args.ids)
        missing = [fid for fid in corpus.ids if fid not in matrix]
        if missing:
            raise ValueError(
                f"imported embeddings miss {len(missing)} corpus facts, "
                f"first {missing[:3]}"
            )
    save_embeddings(matrix, args.out_vectors, args.out_ids)
    print(f"encoded {len(matrix.ids)} facts at dim {matrix.dim}")
    return 0


def cmd_index(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    stack = _load_stack(args, corpus)
    index = build_index(stack, corpus)
    summary = {
        "entries": len(index),
        "dim": int(index.unit_rows.shape[1]),
        "generation": index.generation,
        "zero_rows": sorted(index.zero_ids),
    }
    _write_json(args.out, summary)
    print(f"indexed {summary['entries']} premises, {len(summary['zero_rows'])} zero rows")
    return 0


def cmd_pairs(args: argparse.Namespace) -> int:
    _, trees = ingest_trees(args.trees, args.format)
    n = 0
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for tree in trees:
            for parent, child in extract_pairs(tree):
                fh.write(
                    json.dumps({"tree": tree.id, "parent": parent, "child": child}) + "\n"
                )
                n += 1
    print(f"wrote {n} (parent, child) pairs")
    return 0


def cmd_triplets(args: argparse.Namespace) -> int:
    corpus, trees = ingest_trees(args.trees, args.format)
    store = build_gold_triplets(
        trees, corpus, random_pool_size=args.random_pool, seed=args.seed
    )
    store.save(args.out)
    counts = store.provenance_counts()
    print(f"wrote {len(store)} triplets {counts}")
    return 0


def _trees_with_corpus(args: argparse.Namespace):
    """Tree facts, merged into the wider retrieval corpus when one is given."""
    corpus, trees = ingest_trees(args.trees, args.format)
    if getattr(args, "corpus", None):
        full = read_corpus(args.corpus)
        for fact in corpus:
            full.add(fact)
        corpus = full
    return corpus, trees


def cmd_sample(args: argparse.Namespace) -> int:
    corpus, trees = _trees_with_corpus(args)
    stack = _load_stack(args, corpus)
    index = build_index(stack, corpus)
    oracle = GoldOracle(trees)
    if args.sampler == "acs":
        if not args.query:
            raise ValueError("--mode acs needs --query with the hypothesis fact id")
        query = corpus.get(args.query)
        budget = args.depth_budget if args.depth_budget else oracle.max_depth
        positives, negatives = acs(query, corpus, index, stack, oracle, args.k, budget)
        pools = SamplePools(
            positives=positives, negatives=negatives, round=1, max_depth=budget
        )
    elif args.rounds > 1:
        snapshots = resample_iterative(
            tree_hypotheses(trees, corpus),
            corpus,
            index,
            stack,
            oracle,
            args.k,
            rounds=args.rounds,
            depth_budget=args.depth_budget or None,
        )
        pools = snapshots[-1]
    else:
        pools = ae_enc(
            tree_hypotheses(trees, corpus),
            corpus,
            index,
            stack,
            oracle,
            args.k,
            depth_budget=args.depth_budget or None,
        )
    save_pools(pools, args.out)
    counts = pools.counts()
    print(f"sampled {counts['positives']} positives, {counts['negatives']} negatives")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    corpus = read_corpus(args.corpus)
    store = TripletStore.load(args.triplets)
    stack = _load_stack(args, corpus)
    config = TrainConfig(
        loss=args.loss,
        margin=args.margin,
        alpha=args.alpha,
        temperature=args.temperature,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        epochs=args.epochs,
        mode=args.mode,
        seed=args.seed,
    )
    stack, report = fine_tune(store, stack, config, corpus)
    named = stack.trainable_parameters()
    if "shared" in named:
        save_adapter(named["shared"], args.out_adapter_query)
    else:
        save_adapter(named["query"], args.out_adapter_query)
        if "premise" in named:
            if not args.out_adapter_premise:
                raise ValueError("dual mode needs --out-adapter-premise")
            save_adapter(named["premise"], args.out_adapter_premise)
    if args.report:
        save_report(report, args.report)
    print(
        f"trained {config.epochs} epochs, final loss {report.epoch_losses[-1]:.6f}, "
        f"skipped {report.skipped_triplets}"
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    corpus, trees = _trees_with_corpus(args)
    stack = _load_stack(args, corpus)
    index = build_index(stack, corpus)
    k_list = _parse_k_list(args.k_list)
    report = evaluate_trees(
        trees,
        index,
        stack,
        corpus,
        k_list=k_list,
        hit_variant=args.hit_variant,
        exclude_self=args.exclude_self,
    )
    _write_json(args.out, report.to_dict())
    ndcg = " ".join(f"NDCG@{k}={report.ndcg_at[k]:.4f}" for k in k_list)
    print(f"MAP={report.map:.4f} {ndcg} over {report.n_queries} queries")
    return 0


def cmd_bias_report(args: argparse.Namespace) -> int:
    corpus, trees = _trees_with_corpus(args)
    stack = _load_stack(args, corpus)
    index = build_index(stack, corpus)
    classification = classify_pairs(trees, index, stack, corpus, k=args.k)
    report = bias_report(classification, corpus, stack, n_bins=args.bins)
    with open(args.out_csv, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(report.to_csv())
    if args.out_summary:
        _write_json(args.out_summary, report.summary())
    counts = classification.counts()
    print(
        f"TP={counts['tp']} FN={counts['fn']} FP={counts['fp']} at K={args.k}; "
        f"histograms in {args.out_csv}"
    )
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    if args.preset != "biased":
        raise ValueError(f"unknown preset {args.preset!r}")
    dataset = generate_biased_dataset(
        seed=args.seed,
        n_train=args.n_train,
        n_test=args.n_test,
        n_fillers=args.n_fillers,
    )
    save_dataset(dataset, args.out_dir)
    print(
        f"synthesized {len(dataset.corpus)} facts, "
        f"{len(dataset.train_trees)} train trees, {len(dataset.test_trees)} test trees"
    )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import ServeConfig, serve

    config = ServeConfig(
        corpus_path=args.corpus,
        data_dir=args.data_dir,
        trees_path=args.trees,
        trees_format=args.format,
        backend=args.backend,
        vectors_path=args.vectors,
        ids_path=args.ids,
        mode=args.mode,
        default_k=args.default_k,
        host=args.host,
        port=args.port,
    )
    serve(config)
    return 0


# -- parser assembly ---------------------------------------------------------


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(
        prog="entailkit",
        description="entailment-tree retrieval workbench",
    )
    parser.add_argument("--config", help="JSON config file; flags override its values")
    subs = parser.add_subparsers(dest="command", required=True)
    registry: dict[str, argparse.ArgumentParser] = {}

    def sub(name: str, fn, help_text: str) -> argparse.ArgumentParser:
        p = subs.add_parser(name, help=help_text)
        p.set_defaults(fn=fn)
        registry[name] = p
        return p

    p = sub("ingest", cmd_ingest, "read a tree file, write canonical corpus + trees")
    p.add_argument("--trees", required=True)
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    p.add_argument("--out-corpus", required=True)
    p.add_argument("--out-trees", required=True)

    p = sub("encode", cmd_encode, "build or import the embedding matrix")
    p.add_argument("--corpus", required=True)
    _add_backend_flags(p)
    p.add_argument("--out-vectors", required=True)
    p.add_argument("--out-ids", required=True)

    p = sub("index", cmd_index, "assemble the retrieval index and report stats")
    p.add_argument("--corpus", required=True)
    _add_backend_flags(p)
    _add_adapter_flags(p)
    p.add_argument("--out", required=True)

    p = sub("pairs", cmd_pairs, "extract (parent, child) training pairs from trees")
    p.add_argument("--trees", required=True)
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    p.add_argument("--out", required=True)

    p = sub("triplets", cmd_triplets, "build gold triplets from trees")
    p.add_argument("--trees", required=True)
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    p.add_argument("--random-pool", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub("sample", cmd_sample, "run active contrastive sampling over gold trees")
    p.add_argument("--trees", required=True)
    p.add_argument("--corpus", help="wider retrieval corpus to merge with tree facts")
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    p.add_argument(
        "--mode",
        dest="sampler",
        choices=("acs", "ae-enc"),
        default="ae-enc",
        help="acs samples one hypothesis (--query); ae-enc covers all of them",
    )
    p.add_argument("--query", help="hypothesis fact id for --mode acs")
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--rounds", type=int, default=1)
    p.add_argument("--depth-budget", type=int, default=0, help="0 means the gold depth")
    _add_backend_flags(p)
    p.add_argument("--out", required=True)

    p = sub("train", cmd_train, "fine-tune adapters on a triplet store")
    p.add_argument("--corpus", required=True)
    p.add_argument("--triplets", required=True)
    p.add_argument("--loss", choices=("tml", "scl"), default="tml")
    p.add_argument("--alpha", type=float, default=0.1)
    p.add_argument("--margin", type=float, default=0.1)
    p.add_argument("--temperature", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-5)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_backend_flags(p)
    p.add_argument("--mode", choices=("single", "siamese", "dual"), default="single")
    p.add_argument("--out-adapter-query", required=True)
    p.add_argument("--out-adapter-premise")
    p.add_argument("--report")

    p = sub("eval", cmd_eval, "rank every tree query and write metrics")
    p.add_argument("--trees", required=True)
    p.add_argument("--corpus", help="wider retrieval corpus to merge with tree facts")
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    _add_backend_flags(p)
    _add_adapter_flags(p)
    p.add_argument("--k-list", default=",".join(str(k) for k in DEFAULT_K_LIST))
    p.add_argument("--hit-variant", choices=("recall", "any"), default="recall")
    p.add_argument("--exclude-self", action="store_true")
    p.add_argument("--out", required=True)

    p = sub("bias-report", cmd_bias_report, "TP/FN/FP overlap histograms")
    p.add_argument("--trees", required=True)
    p.add_argument("--corpus", help="wider retrieval corpus to merge with tree facts")
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    _add_backend_flags(p)
    _add_adapter_flags(p)
    p.add_argument("--k", type=int, default=20)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out-csv", required=True)
    p.add_argument("--out-summary")

    p = sub("synth", cmd_synth, "generate a synthetic benchmark dataset")
    p.add_argument("--preset", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-train", type=int, default=30)
    p.add_argument("--n-test", type=int, default=12)
    p.add_argument("--n-fillers", type=int, default=200)
    p.add_argument("--out-dir", required=True)

    p = sub("serve", cmd_serve, "run the annotation HTTP service")
    p.add_argument("--corpus", required=True)
    p.add_argument("--trees")
    p.add_argument("--format", choices=("canonical", "entailment-bank"), default="canonical")
    p.add_argument("--data-dir", required=True)
    _add_backend_flags(p)
    p.add_argument("--mode", choices=("single", "siamese", "dual"), default="single")
    p.add_argument("--default-k", type=int, default=20)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8470)

    return parser, registry


def _apply_config(
    argv: Sequence[str],
    registry: dict[str, argparse.ArgumentParser],
) -> None:
    """Overlay config-file values as parser defaults so flags still win."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    with open(known.config, encoding="utf-8") as fh:
        config = json.load(fh)
    if not isinstance(config, dict):
        raise ValueError("config file must hold a JSON object keyed by subcommand")
    for section, values in config.items():
        sub = registry.get(section)
        if sub is None:
            raise ValueError(f"config names unknown subcommand {section!r}")
        if not isinstance(values, dict):
            raise ValueError(f"config section {section!r} must be an object")
        renamed = {key.replace("-", "_"): val for key, val in values.items()}
        known_dests = {action.dest for action in sub._actions}
        unknown = sorted(set(renamed) - known_dests)
        if unknown:
            raise ValueError(f"config section {section!r} has unknown keys {unknown}")
        sub.set_defaults(**renamed)


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser, registry = build_parser()
    try:
        _apply_config(argv, registry)
        args = parser.parse_args(argv)
        return args.fn(args)
    except DATA_ERRORS as exc:
        message = str(exc)
        if isinstance(exc, KeyError):
            message = message.strip('"')
        print(f"error: {message}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
