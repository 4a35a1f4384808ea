"""``pact`` command line: one subcommand per pipeline stage, file in, file out."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path
from typing import Callable, Sequence

from pact.agent import (
    DEFAULT_MAX_STEPS,
    completion_policy,
    load_scripted_policy,
    pact_tool,
    rule_policy,
    run_agent,
)
from pact.artifacts import load_corpus, two_hop_pairs, write_corpus
from pact.embedder import AdapterPair, Embedder, FeatureHashEncoder, PrecomputedEncoder
from pact.errors import PactError
from pact.eval.experiments import (
    recall_csv,
    run_experiment1,
    run_experiment2,
    run_experiment3,
    run_generalization_guard,
)
from pact.eval.metrics import KeywordBenchmark
from pact.eval.synthetic import COMMON_WORDS, SyntheticSpec, write_synthetic
from pact.fetcher import (
    CompletionRanker,
    LexicalRanker,
    ScriptedRanker,
    http_completion,
    load_catalog,
    load_projects,
)
from pact.index import build_exact, load_index, save_index, train_pq
from pact.knn_graph import DEFAULT_K, build_knn_graph, load_graph, save_graph
from pact.search import SearchRequest, search
from pact.trainer import TrainConfig, split_edges, train

log = logging.getLogger("pact")

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def read_config(path: str | Path) -> dict[str, str]:
    """``key = value`` lines; ``#`` starts a comment. Keys may use dashes or underscores."""
    out = {}
    for n, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value', got {raw!r}")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in {"1", "true", "yes", "on"}:
        return True
    if lowered in {"0", "false", "no", "off"}:
        return False
    raise UsageError(f"not a boolean: {text!r}")


def _csv(text: str) -> list[str]:
    return [p.strip() for p in text.split(",") if p.strip()]


def _pq(text: str) -> tuple[int, int]:
    try:
        m, ksub = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected M,KSUB, got {text!r}") from None
    return m, ksub


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=7, help="random seed for this stage")
    p.add_argument("--config", metavar="PATH", help="key = value defaults; flags override them")
    p.add_argument("--quiet", action="store_true", help="suppress progress messages")
    p.add_argument("--json-errors", action="store_true", help="report errors as JSON on stderr")


def _encoder_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dim", type=int, default=256, help="feature-hash dimension")
    p.add_argument("--encoder-seed", type=int, default=0, help="feature-hash key")
    p.add_argument("--vectors", metavar="NPZ", help="precomputed base vectors keyed by artifact id")


def _train_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--negatives", type=int, default=d.negatives_per_positive, help="negatives per positive")
    p.add_argument("--split", default=d.train_test_split_ratio, help="train:test edge ratio")
    p.add_argument("--two-hop-weight", type=float, default=d.two_hop_weight)
    p.add_argument("--no-two-hop", action="store_true", help="skip second-degree positives")
    p.add_argument("--no-in-batch", action="store_true", help="skip in-batch negatives")
    p.add_argument("--freeze-context", action="store_true", help="update the query adapter only")
    p.add_argument("--tied", action="store_true", help="share one matrix for both adapters")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="pact", description="Typed-artifact embedding, search and evaluation.",
                                     formatter_class=fmt)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name: str, handler: Callable, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=fmt)
        p.set_defaults(handler=handler)
        _common(p)
        return p

    p = add("gen-synthetic", cmd_gen_synthetic, "write a synthetic corpus, catalog and benchmark")
    p.add_argument("-o", "--out", required=True, help="output directory")
    spec = SyntheticSpec()
    p.add_argument("--nonlexical-rate", type=float, default=spec.nonlexical_rate)
    p.add_argument("--questions", type=int, default=spec.questions)
    p.add_argument("--projects", type=int, default=spec.projects)

    p = add("ingest", cmd_ingest, "validate a corpus file and write it back in canonical form")
    p.add_argument("corpus", help="input corpus JSONL")
    p.add_argument("-o", "--out", help="canonical corpus output")

    p = add("train", cmd_train, "fine-tune the adapters on the train part of the edge split")
    p.add_argument("--corpus", required=True)
    p.add_argument("-o", "--out", required=True, help="adapter file")
    p.add_argument("--report", help="training report JSON")
    p.add_argument("--all-edges", action="store_true", help="train on every edge, no held-out split")
    _encoder_flags(p)
    _train_flags(p)

    p = add("build-index", cmd_build_index, "embed a corpus into an index file")
    p.add_argument("--corpus", required=True)
    p.add_argument("--adapters", help="adapter file; identity when omitted")
    p.add_argument("-o", "--out", required=True, help="index file")
    p.add_argument("--pq", type=_pq, metavar="M,KSUB", help="also train product quantization")
    p.add_argument("--pq-iters", type=int, default=20, help="k-means iterations per subspace")
    p.add_argument("--drop-exact", action="store_true", help="keep PQ codes only")
    p.add_argument("--cosine", action="store_true", help="L2-normalize adapted vectors")
    _encoder_flags(p)

    p = add("knn-graph", cmd_knn_graph, "build the symmetric KNN graph of an index")
    p.add_argument("--index", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("-o", "--out", required=True, help="graph file")

    p = add("search", cmd_search, "free-text search over an index")
    p.add_argument("query")
    p.add_argument("--index", required=True)
    p.add_argument("--adapters", help="adapter file; identity when omitted")
    p.add_argument("--graph", help="KNN graph for enrichment")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--types", type=_csv, help="comma-separated artifact types")
    p.add_argument("--hops", type=int, default=0, help="graph enrichment hops")
    p.add_argument("--enrich-types", type=_csv, help="types allowed for enriched hits")
    p.add_argument("--no-rerank", action="store_true", help="PQ scores without exact re-scoring")
    p.add_argument("--cosine", action="store_true")
    p.add_argument("--pretty", action="store_true", help="table instead of JSON")

    p = add("eval-recall", cmd_eval_recall, "heuristic vs identity vs fine-tuned recall on held-out edges")
    p.add_argument("--corpus", required=True)
    p.add_argument("--adapters", help="trained adapters; trained on the split when omitted")
    p.add_argument("--guard", help="disjoint-vocabulary corpus for the generalization guard")
    p.add_argument("--report", required=True, help="JSON report")
    p.add_argument("--csv", help="plot-ready recall CSV")
    _encoder_flags(p)
    _train_flags(p)

    p = add("eval-fetcher", cmd_eval_fetcher, "compare ranker-only, KNN and hybrid node classification")
    p.add_argument("--catalog", required=True)
    p.add_argument("--projects", required=True)
    p.add_argument("--methods", type=_csv, default=["llm", "knn", "hybrid"])
    p.add_argument("--ranker", default="lexical", help="lexical | scripted:FILE | remote:URL")
    p.add_argument("--adapters", help="adapter file; identity when omitted")
    p.add_argument("--workers", type=int, default=1, help="concurrent ranker calls per round")
    p.add_argument("--shuffle-seed", type=int, help="shuffle divide-and-conquer batches")
    p.add_argument("--report", required=True)
    _encoder_flags(p)

    p = add("eval-agent", cmd_eval_agent, "keyword match rates with and without the search tool")
    p.add_argument("--bench", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--adapters", help="adapter file; identity when omitted")
    p.add_argument("--vocab", help="known-term list, one per line")
    p.add_argument("--graph")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--report", required=True)

    p = add("agent-run", cmd_agent_run, "answer one question with the agent loop")
    p.add_argument("--question", required=True)
    p.add_argument("--index", required=True)
    p.add_argument("--adapters", help="adapter file; identity when omitted")
    p.add_argument("--policy", default="rule", help="rule | scripted:FILE | remote:URL")
    p.add_argument("--vocab", help="known-term list for the rule policy")
    p.add_argument("--graph")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--hops", type=int, default=0)
    p.add_argument("--max-steps", type=int, default=DEFAULT_MAX_STEPS)
    p.add_argument("--no-tool", action="store_true", help="run without the search tool")
    p.add_argument("--transcript", help="transcript JSON")

    # the defaults formatter only annotates flags that have help text
    for subparser in sub.choices.values():
        for action in subparser._actions:  # noqa: SLF001
            if action.help is None:
                action.help = action.dest.replace("_", " ")
    return parser


# helpers -------------------------------------------------------------------


def _encoder(args, dim: int | None = None, seed: int | None = None):
    if getattr(args, "vectors", None):
        return PrecomputedEncoder.from_npz(args.vectors)
    return FeatureHashEncoder(dim or args.dim, args.encoder_seed if seed is None else seed)


def _adapters(path: str | None, dim: int) -> AdapterPair:
    return AdapterPair.load(path) if path else AdapterPair.identity(dim)


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        negatives_per_positive=args.negatives,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        batch_size=args.batch_size,
        seed=args.seed,
        include_two_hop=not args.no_two_hop,
        in_batch_negatives=not args.no_in_batch,
        train_test_split_ratio=args.split,
        two_hop_weight=args.two_hop_weight,
        freeze_context=args.freeze_context,
        tied=args.tied,
    )


def _load_searchable(args):
    """Index plus an embedder rebuilt from the index header."""
    adapters = AdapterPair.load(args.adapters) if args.adapters else None
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        index = load_index(args.index, adapters)
    for w in caught:
        log.warning("%s", w.message)
    if adapters is None:
        adapters = AdapterPair.identity(index.dim)
    encoder = FeatureHashEncoder(index.dim, index.encoder_seed)
    embedder = Embedder(encoder, adapters, getattr(args, "cosine", False))
    graph = load_graph(args.graph) if getattr(args, "graph", None) else None
    return index, embedder, graph


def _vocab(path: str | None) -> frozenset[str]:
    if not path:
        return COMMON_WORDS
    return frozenset(w.strip().lower() for w in Path(path).read_text(encoding="utf-8").split() if w.strip())


def _write_json(path: str | Path, payload) -> None:
    text = payload if isinstance(payload, str) else json.dumps(payload, indent=2, sort_keys=True)
    Path(path).write_text(text + "\n", encoding="utf-8")


def _split_target(spec: str) -> tuple[str, str | None]:
    kind, _, target = spec.partition(":")
    return kind, target or None


# subcommands ---------------------------------------------------------------


def cmd_gen_synthetic(args) -> None:
    spec = SyntheticSpec(
        seed=args.seed, nonlexical_rate=args.nonlexical_rate, questions=args.questions, projects=args.projects
    )
    paths = write_synthetic(spec, args.out)
    for name, path in paths.items():
        log.info("wrote %s: %s", name, path)


def cmd_ingest(args) -> None:
    corpus = load_corpus(args.corpus)
    summary = {
        "artifacts": len(corpus),
        "by_type": {t: len(corpus.of_type(t)) for t in corpus.types},
        "edges": len(corpus.graph),
        "two_hop_pairs": len(two_hop_pairs(corpus.graph)),
    }
    if args.out:
        write_corpus(corpus, args.out)
        log.info("wrote %s", args.out)
    print(json.dumps(summary, sort_keys=True))


def cmd_train(args) -> None:
    corpus = load_corpus(args.corpus)
    cfg = _train_config(args)
    graph = corpus.graph if args.all_edges else split_edges(corpus.graph, cfg.train_test_split_ratio, cfg.seed)[0]
    adapters, report = train(corpus, graph, cfg, _encoder(args))
    adapters.save(args.out)
    log.info("trained on %d examples; loss %.4f -> %.4f", report.examples, report.initial_loss,
             report.losses[-1] if report.losses else report.initial_loss)
    if args.report:
        _write_json(args.report, report.to_json())


def cmd_build_index(args) -> None:
    corpus = load_corpus(args.corpus)
    encoder = _encoder(args)
    embedder = Embedder(encoder, _adapters(args.adapters, args.dim), args.cosine)
    index = build_exact(corpus, embedder)
    if args.pq:
        m, ksub = args.pq
        index = index.with_codebook(train_pq(index, m, ksub, args.pq_iters, args.seed), args.drop_exact)
    elif args.drop_exact:
        raise UsageError("--drop-exact needs --pq")
    save_index(index, args.out)
    log.info("indexed %d artifacts (%s mode) into %s", len(index), index.mode, args.out)


def cmd_knn_graph(args) -> None:
    graph = build_knn_graph(load_index(args.index), args.k)
    save_graph(graph, args.out)
    log.info("wrote %d edges to %s", len(graph.edges), args.out)


def cmd_search(args) -> None:
    index, embedder, graph = _load_searchable(args)
    req = SearchRequest(
        args.query,
        args.k,
        frozenset(args.types) if args.types else None,
        args.hops,
        frozenset(args.enrich_types) if args.enrich_types else None,
    )
    result = search(req, index, embedder, graph, rerank=not args.no_rerank)
    print(result.pretty() if args.pretty else result.to_json())


def cmd_eval_recall(args) -> None:
    corpus = load_corpus(args.corpus)
    encoder = _encoder(args)
    adapters = AdapterPair.load(args.adapters) if args.adapters else None
    report, adapters, _ = run_experiment1(corpus, _train_config(args), encoder, adapters)
    if args.guard:
        guard = run_generalization_guard(load_corpus(args.guard), encoder, adapters)
        report.extra["guard"] = guard.to_dict()
    report.save(args.report)
    if args.csv:
        Path(args.csv).write_text(recall_csv(report), encoding="utf-8")
    for system, values in report.metrics.items():
        log.info("%s: %s", system, ", ".join(f"{k}={v:.3f}" for k, v in values.items()))


def _ranker(spec: str):
    kind, target = _split_target(spec)
    if kind == "lexical" and target is None:
        return LexicalRanker()
    if kind == "scripted" and target:
        return ScriptedRanker.from_file(target)
    if kind == "remote" and target:
        return CompletionRanker(http_completion(target))
    raise UsageError(f"--ranker must be lexical, scripted:FILE or remote:URL, got {spec!r}")


def cmd_eval_fetcher(args) -> None:
    catalog = load_catalog(args.catalog)
    projects = load_projects(args.projects)
    embedder = Embedder(_encoder(args), _adapters(args.adapters, args.dim))
    report = run_experiment2(
        catalog, projects, embedder, _ranker(args.ranker), args.methods, args.workers, args.shuffle_seed
    )
    report.save(args.report)
    for method in args.methods:
        m = report.metrics[method]
        log.info("%s: T1=%.3f T5=%.3f T20=%.3f calls=%d", method, m["T1"], m["T5"], m["T20"], m["ranker_calls"])


def cmd_eval_agent(args) -> None:
    index, embedder, graph = _load_searchable(args)
    bench = KeywordBenchmark.load(args.bench)
    report = run_experiment3(bench, index, embedder, _vocab(args.vocab), graph, args.k, args.max_steps)
    report.save(args.report)
    for agent, values in report.metrics.items():
        log.info("%s: average=%.3f global=%.3f", agent, values["average_match_rate"], values["global_match_rate"])


def cmd_agent_run(args) -> None:
    index, embedder, graph = _load_searchable(args)
    kind, target = _split_target(args.policy)
    if kind == "rule" and target is None:
        policy = rule_policy(_vocab(args.vocab))
    elif kind == "scripted" and target:
        policy = load_scripted_policy(target)
    elif kind == "remote" and target:
        policy = completion_policy(http_completion(target))
    else:
        raise UsageError(f"--policy must be rule, scripted:FILE or remote:URL, got {args.policy!r}")
    tools = [] if args.no_tool else [pact_tool(index, embedder, graph, args.k, args.hops)]
    transcript = run_agent(args.question, policy, tools, args.max_steps)
    if args.transcript:
        _write_json(args.transcript, transcript.to_json())
    print(transcript.final_answer)


# entry point ---------------------------------------------------------------


def _config_path(argv: Sequence[str]) -> str | None:
    for i, token in enumerate(argv):
        if token == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if token.startswith("--config="):
            return token.split("=", 1)[1]
    return None


def _apply_config(parser: argparse.ArgumentParser, argv: Sequence[str]) -> argparse.Namespace:
    """Config file values become subcommand defaults, so explicit flags still win."""
    commands = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    command = next((t for t in argv if t in commands), None)
    path = _config_path(argv)
    if command is None or path is None:
        return parser.parse_args(argv)
    subparser = commands[command]
    actions = {a.dest: a for a in subparser._actions}  # noqa: SLF001
    defaults = {}
    for key, value in read_config(path).items():
        action = actions.get(key)
        if action is None or key in {"help", "config"}:
            raise UsageError(f"{path}: unknown option {key!r} for {command}")
        if isinstance(action, argparse._StoreTrueAction):  # noqa: SLF001
            defaults[key] = _bool(value)
        elif action.type is not None:
            try:
                defaults[key] = action.type(value)
            except (argparse.ArgumentTypeError, ValueError) as exc:
                raise UsageError(f"{path}: bad value for {key}: {exc}") from None
        else:
            defaults[key] = value
        # a required option supplied by the file is no longer required on the command line
        action.required = False
    subparser.set_defaults(**defaults)
    return parser.parse_args(argv)


def _fail(args, exc: BaseException, code: int) -> int:
    if args is not None and getattr(args, "json_errors", False):
        print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    else:
        print(f"pact: error: {exc}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = None
    try:
        args = _apply_config(parser, argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        return _fail(args, exc, EXIT_USAGE)
    except OSError as exc:
        return _fail(args, exc, EXIT_DOMAIN)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(message)s", force=True)
    try:
        args.handler(args)
    except UsageError as exc:
        return _fail(args, exc, EXIT_USAGE)
    except (PactError, OSError, ValueError) as exc:
        return _fail(args, exc, EXIT_DOMAIN)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
