"""Command-line entry point: ingest, index, ask, eval, export-graph, stats.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from .corpus import chunk_corpus, load_corpus
from .errors import (
    ConfigurationError,
    CorpusLoadError,
    CorpusParseError,
    IndexFormatError,
    HopGraphError,
    ValidationError,
)
from .eval import load_dataset, run_benchmark
from .graph import KnowledgeGraph
from .index import MAGIC, HashingEmbedder, Index, build_index, load_index, save_index
from .pipeline import PipelineConfig, QAEngine, make_llm
from .trace import Trace

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2
DEFAULT_CONFIG = Path("hopgraph.json")
DEFAULT_TRACE = Path("hopgraph-trace.jsonl")
EXPORT_FORMATS = ("json", "tsv")

# failures caused by bad input rather than by the run itself
_USAGE_ERRORS = (ConfigurationError, CorpusLoadError, CorpusParseError, IndexFormatError, ValidationError)


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # keep argparse's exit code but our prefix
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"hopgraph: error: {message}\n")


def _load_config(args) -> PipelineConfig:
    if args.config:
        return PipelineConfig.load(args.config)
    if DEFAULT_CONFIG.exists():
        return PipelineConfig.load(DEFAULT_CONFIG)
    return PipelineConfig()


def _apply_provider_flags(cfg: PipelineConfig, args) -> None:
    if args.provider == "real" and args.mock_script:
        raise _Usage("--mock-script cannot be combined with --provider real")
    if args.provider:
        cfg.provider.kind = args.provider
    if args.mock_script:
        cfg.provider.kind = "mock"
        cfg.provider.mock_script = args.mock_script
    if cfg.provider.kind == "mock" and cfg.provider.mock_script and not Path(cfg.provider.mock_script).is_file():
        raise _Usage(f"mock script not found: {cfg.provider.mock_script}")


def _open_index(args, cfg: PipelineConfig) -> Index:
    if args.index and args.corpus:
        raise _Usage("--index and --corpus are mutually exclusive")
    if args.index:
        path = Path(args.index)
        if not path.is_file():
            raise _Usage(f"index file not found: {path}")
        return load_index(path)
    if args.corpus:
        path = Path(args.corpus)
        if not path.is_file():
            raise _Usage(f"corpus file not found: {path}")
        chunks = chunk_corpus(load_corpus(path), cfg.chunk_size_tokens, cfg.overlap_tokens)
        return build_index(chunks, HashingEmbedder(cfg.embedding_dim))
    raise _Usage("one of --index or --corpus is required")


def _engine(args) -> QAEngine:
    cfg = _load_config(args)
    _apply_provider_flags(cfg, args)
    llm = make_llm(cfg.provider)  # provider problems surface before any retrieval
    return QAEngine(_open_index(args, cfg), llm, cfg)


# -- commands ------------------------------------------------------------------


def cmd_ingest(args) -> int:
    cfg = _load_config(args)
    path = Path(args.corpus)
    if not path.is_file():
        raise _Usage(f"corpus file not found: {path}")
    docs = load_corpus(path)
    chunks = chunk_corpus(docs, cfg.chunk_size_tokens, cfg.overlap_tokens)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for c in chunks:
                fh.write(json.dumps(c.__dict__, ensure_ascii=False) + "\n")
    print(f"documents {len(docs)} chunks {len(chunks)}")
    return EXIT_OK


def cmd_index(args) -> int:
    cfg = _load_config(args)
    path = Path(args.corpus)
    if not path.is_file():
        raise _Usage(f"corpus file not found: {path}")
    chunks = chunk_corpus(load_corpus(path), cfg.chunk_size_tokens, cfg.overlap_tokens)
    index = build_index(chunks, HashingEmbedder(cfg.embedding_dim))
    save_index(index, args.out)
    print(f"chunks {index.N} terms {len(index.lexical.postings)} dim {index.vector.dimension} -> {args.out}")
    return EXIT_OK


def cmd_ask(args) -> int:
    engine = _engine(args)
    trace_path = Path(args.trace) if args.trace else DEFAULT_TRACE
    rec = engine.answer(args.question, trace_path)
    if args.explain:
        for p in rec.partial_answers:
            for chain in p.evidence.chains:
                print(chain)
    print(rec.final)
    return EXIT_OK


def cmd_eval(args) -> int:
    if args.jobs < 1:
        raise _Usage("--jobs must be at least 1")
    dataset = load_dataset(args.dataset, args.limit)
    cfg = _load_config(args)
    _apply_provider_flags(cfg, args)
    make_llm(cfg.provider)  # fail on provider settings before loading anything else
    index = _open_index(args, cfg)

    def factory() -> QAEngine:
        return QAEngine(index, make_llm(cfg.provider), cfg)

    report = run_benchmark(
        dataset,
        factory,
        decompose=not args.no_decompose,
        reasoning=not args.no_reasoning,
        out_path=args.out,
        trace_dir=args.trace_dir,
        jobs=args.jobs,
    )
    print(report.summary_line())
    return EXIT_OK


def _graph_from(path: Path) -> KnowledgeGraph:
    if not path.is_file():
        raise _Usage(f"no run state at {path}")
    text = path.read_text(encoding="utf-8")
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        data = None
    if isinstance(data, dict) and "nodes" in data:
        return KnowledgeGraph.from_dict(data)
    try:
        events = Trace.read(path)
    except json.JSONDecodeError as exc:
        raise _Usage(f"{path} is neither a trace nor a graph file") from exc
    graphs = [e["graph"] for e in events if e.get("event") == "graph"]
    if not graphs:
        raise _Usage(f"{path} has no graph snapshot (was the run completed?)")
    return KnowledgeGraph.from_dict(graphs[-1])


def cmd_export_graph(args) -> int:
    g = _graph_from(Path(args.state))
    text = g.to_tsv() if args.format == "tsv" else json.dumps(g.to_dict(), indent=2, ensure_ascii=False) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    path = Path(args.path)
    if not path.is_file():
        raise _Usage(f"file not found: {path}")
    with open(path, "rb") as fh:
        is_index = fh.read(len(MAGIC)) == MAGIC
    if is_index:
        index = load_index(path)
    else:
        cfg = _load_config(args)
        chunks = chunk_corpus(load_corpus(path), cfg.chunk_size_tokens, cfg.overlap_tokens)
        index = build_index(chunks, HashingEmbedder(cfg.embedding_dim))
    docs = {c.doc_id for c in index.chunks.values()}
    stats = {
        "kind": "index" if is_index else "corpus",
        "documents": len(docs),
        "chunks": index.N,
        "terms": len(index.lexical.postings),
        "avg_chunk_tokens": round(index.lexical.avg_doc_length, 2),
        "vector_dim": index.vector.dimension,
    }
    for k, v in stats.items():
        print(f"{k}\t{v}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def _provider_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--provider", choices=("real", "mock"), help="model provider (default: from config)")
    p.add_argument("--mock-script", help="JSON script of canned responses for the mock provider")


def _source_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--index", help="index file written by 'hopgraph index'")
    p.add_argument("--corpus", help="corpus JSONL to index in memory instead of --index")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="hopgraph",
        description="Multi-hop question answering over a lazily built knowledge graph.",
        epilog=(
            "The real provider reads its API key from the environment variable named by "
            "provider.api_key_env in the config (default HOPGRAPH_API_KEY). Without --config, "
            f"./{DEFAULT_CONFIG} is used when present."
        ),
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to standard error")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest", help="load and chunk a corpus, optionally writing chunks")
    p.add_argument("corpus")
    p.add_argument("--out", help="write chunks as JSONL")
    p.add_argument("--config")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("index", help="build and persist the hybrid index")
    p.add_argument("corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_index)

    p = sub.add_parser("ask", help="answer one question")
    p.add_argument("question")
    _source_args(p)
    p.add_argument("--config")
    p.add_argument("--trace", help=f"trace output path (default {DEFAULT_TRACE})")
    _provider_args(p)
    p.add_argument("--explain", action="store_true", help="print evidence chains before the answer")
    p.set_defaults(func=cmd_ask)

    p = sub.add_parser("eval", help="score a QA dataset")
    p.add_argument("dataset")
    _source_args(p)
    p.add_argument("--config")
    p.add_argument("--out", default="hopgraph-report.jsonl", help="report path; reruns resume from it")
    p.add_argument("--trace-dir", help="write one trace per question here")
    p.add_argument("--no-decompose", action="store_true", help="answer each question as a single step")
    p.add_argument("--no-reasoning", action="store_true", help="answer from retrieved passages, no graph chains")
    p.add_argument("--jobs", type=int, default=1, help="questions answered concurrently")
    p.add_argument("--limit", type=int, help="only the first N questions")
    _provider_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-graph", help="export the graph of a finished run")
    p.add_argument("state", help="trace JSONL of a run, or a graph JSON file")
    p.add_argument("--out")
    p.add_argument("--format", choices=EXPORT_FORMATS, default="json")
    p.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("stats", help="describe a corpus or index file")
    p.add_argument("path")
    p.add_argument("--config")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except _Usage as exc:
        print(f"hopgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _USAGE_ERRORS as exc:
        print(f"hopgraph: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (HopGraphError, OSError) as exc:
        print(f"hopgraph: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
