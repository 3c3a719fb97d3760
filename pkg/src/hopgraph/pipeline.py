"""End-to-end orchestration of one question.

decompose -> cold start -> for each sub-question {re-seed if empty, seeds,
BFS paths, evidence chains, partial answer, frontier, augment} -> community
summaries -> merge -> finalize.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

from .bfs_rf import (
    EvidenceContext,
    PartialAnswer,
    answer_subquestion,
    build_context,
    select_seeds,
)
from .community import detect_communities, summarize_community
from .corpus import chunk_corpus, load_corpus
from .errors import ConfigurationError, CorpusLoadError, ProviderError
from .extraction import Extractor, LLMExtractor, RuleExtractor, load_gazetteer
from .graph import KnowledgeGraph, UpsertReport
from .index import (
    MAGIC,
    HashingEmbedder,
    Index,
    RetrievalHit,
    build_index,
    frontier_conditioned_search,
    hybrid_search,
    load_index,
)
from .llm import HTTPProvider, LLMClient, MockProvider, MockScript, PromptRequest, render_template
from .trace import Trace

__all__ = [
    "Caps",
    "ProviderSettings",
    "PipelineConfig",
    "SubQuestion",
    "Frontier",
    "AnswerRecord",
    "RunState",
    "QAEngine",
    "make_llm",
    "decompose",
    "cold_start",
    "augment_graph",
    "reseed_if_empty",
    "merge_answers",
    "finalize",
    "answer",
]

log = logging.getLogger(__name__)


# -- configuration -----------------------------------------------------------


@dataclass
class Caps:
    max_paths_per_seed: int = 32
    max_branch: int = 16


@dataclass
class ProviderSettings:
    kind: str = "mock"  # "mock" or "real"
    endpoint: str = ""
    model: str = ""
    api_key_env: str = "HOPGRAPH_API_KEY"
    mock_script: str | None = None
    cache_dir: str | None = None
    max_in_flight: int = 4
    max_retries: int = 2
    timeout_s: float = 120.0


@dataclass
class PipelineConfig:
    chunk_size_tokens: int = 1200
    overlap_tokens: int = 100
    bfs_depth: int = 2
    k_passages: int = 20
    k_seeds: int = 5
    reseed_r: int = 10
    min_edge_support: int = 1
    context_budget_chars: int = 8000
    max_subquestions: int = 6
    max_frontier: int = 16
    caps: Caps = field(default_factory=Caps)
    embedding_dim: int = 256
    extractor: str = "rule"  # "rule" or "llm"
    gazetteer: str | None = None
    template_dir: str | None = None
    use_communities: bool = True
    community_seed: int = 0
    decompose: bool = True
    reasoning: bool = True
    provider: ProviderSettings = field(default_factory=ProviderSettings)

    def __post_init__(self) -> None:
        if isinstance(self.caps, dict):
            self.caps = Caps(**self.caps)
        if isinstance(self.provider, dict):
            self.provider = ProviderSettings(**self.provider)
        self.validate()

    def validate(self) -> None:
        positive = (
            "chunk_size_tokens", "bfs_depth", "k_passages", "k_seeds", "reseed_r",
            "min_edge_support", "context_budget_chars", "max_subquestions", "max_frontier",
            "embedding_dim",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive")
        if not 0 <= self.overlap_tokens < self.chunk_size_tokens:
            raise ConfigurationError("overlap_tokens must be in [0, chunk_size_tokens)")
        if self.caps.max_paths_per_seed <= 0 or self.caps.max_branch <= 0:
            raise ConfigurationError("caps must be positive")
        if self.extractor not in ("rule", "llm"):
            raise ConfigurationError(f"unknown extractor {self.extractor!r}")
        if self.provider.kind not in ("mock", "real"):
            raise ConfigurationError(f"unknown provider kind {self.provider.kind!r}")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigurationError(str(exc)) from exc

    @classmethod
    def load(cls, path: str | Path) -> "PipelineConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        # file references inside a config are relative to the config itself
        base = Path(path).resolve().parent
        prov = data.get("provider")
        if isinstance(prov, dict) and prov.get("mock_script"):
            prov["mock_script"] = str(base / prov["mock_script"])
        if data.get("gazetteer"):
            data["gazetteer"] = str(base / data["gazetteer"])
        if data.get("template_dir"):
            data["template_dir"] = str(base / data["template_dir"])
        return cls.from_dict(data)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


def make_llm(settings: ProviderSettings) -> LLMClient:
    """Build the client described by ``settings``; fails before any network use."""
    if settings.kind == "mock":
        script = MockScript.load(settings.mock_script) if settings.mock_script else MockScript()
        provider = MockProvider(script)
    else:
        provider = HTTPProvider(
            settings.endpoint, settings.model, settings.api_key_env, timeout=settings.timeout_s
        )
    return LLMClient(
        provider,
        cache_dir=settings.cache_dir,
        max_in_flight=settings.max_in_flight,
        max_retries=settings.max_retries,
    )


# -- run types ---------------------------------------------------------------


@dataclass
class SubQuestion:
    ordinal: int
    text: str
    depends_on: int | None = None


@dataclass
class Frontier:
    entities: set[str] = field(default_factory=set)
    relations: set[str] = field(default_factory=set)


@dataclass
class RunState:
    graph: KnowledgeGraph
    trace: Trace
    parsed: set[str] = field(default_factory=set)
    extracted: list[str] = field(default_factory=list)
    max_workers: int = 4


@dataclass
class AnswerRecord:
    question: str
    sub_questions: list[SubQuestion]
    partial_answers: list[PartialAnswer]
    merged: str
    final: str
    community_summaries_used: list[str]
    trace: Trace = field(repr=False)
    graph: KnowledgeGraph = field(repr=False)

    @property
    def chains(self) -> list[str]:
        return [c for p in self.partial_answers for c in p.evidence.chains]

    def to_dict(self) -> dict[str, Any]:
        return {
            "question": self.question,
            "sub_questions": [dataclasses.asdict(s) for s in self.sub_questions],
            "partial_answers": [
                {
                    "ordinal": p.sub_question_ordinal,
                    "answer": p.answer_text,
                    "chains": p.evidence.chains,
                    "error": p.error,
                    "provider_trace_id": p.provider_trace_id,
                }
                for p in self.partial_answers
            ],
            "merged": self.merged,
            "final": self.final,
            "community_summaries_used": self.community_summaries_used,
            "trace": str(self.trace.path) if self.trace.path else None,
        }


# -- stages ------------------------------------------------------------------

_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$", re.MULTILINE)


def _parse_subquestions(raw: str) -> list[SubQuestion]:
    data = json.loads(_FENCE.sub("", raw.strip()))
    if isinstance(data, dict):
        data = data.get("sub_questions")
    if not isinstance(data, list) or not data:
        raise ValueError("expected a non-empty list of sub-questions")
    out = []
    for i, item in enumerate(data, start=1):
        dep = None
        if isinstance(item, dict):
            dep = item.get("depends_on")
            item = item.get("question")
        if not isinstance(item, str) or not item.strip():
            raise ValueError(f"sub-question {i} is not a non-empty string")
        if dep is not None and not (isinstance(dep, int) and 1 <= dep < i):
            dep = None
        out.append(SubQuestion(i, item.strip(), dep))
    return out


def decompose(
    question: str,
    llm,
    max_subquestions: int = 6,
    template_dir=None,
    trace: Trace | None = None,
) -> list[SubQuestion]:
    """Split ``question`` into ordered sub-questions.

    One repair round is allowed for malformed output; a provider failure or
    a second malformed reply falls back to the question itself.
    """
    if not question.strip():
        raise ConfigurationError("question must be non-empty")
    variables = {"question": question, "max_subquestions": str(max_subquestions)}
    fallback = [SubQuestion(1, question)]
    try:
        raw = llm.complete(
            PromptRequest("decompose", render_template("decompose", variables, template_dir), "decompose")
        ).text
        try:
            subs = _parse_subquestions(raw)
        except (ValueError, json.JSONDecodeError) as exc:
            repair = render_template(
                "decompose_repair", {**variables, "response": raw, "error": str(exc)}, template_dir
            )
            raw = llm.complete(PromptRequest("decompose_repair", repair, "decompose")).text
            subs = _parse_subquestions(raw)
    except ProviderError as exc:
        log.warning("decomposition failed, answering the question whole: %s", exc)
        _note(trace, "decomposition", sub_questions=[question], fallback="provider_error")
        return fallback
    except (ValueError, json.JSONDecodeError) as exc:
        log.warning("decomposition unparseable after repair, answering whole: %s", exc)
        _note(trace, "decomposition", sub_questions=[question], fallback="malformed")
        return fallback
    if len(subs) > max_subquestions:
        log.info("decomposition truncated from %d to %d sub-questions", len(subs), max_subquestions)
        _note(trace, "decomposition_truncated", returned=len(subs), kept=max_subquestions)
        subs = subs[:max_subquestions]
    _note(trace, "decomposition", sub_questions=[s.text for s in subs], fallback=None)
    return subs


def _note(trace: Trace | None, event: str, **fields: Any) -> None:
    if trace is not None:
        trace.add(event, **fields)


def _hits_dict(hits: Sequence[RetrievalHit]) -> list[dict[str, Any]]:
    return [{"chunk_id": h.chunk_id, "score": h.score, "rank": h.rank} for h in hits]


def _ingest(
    hits: Sequence[RetrievalHit],
    index: Index,
    extractor: Extractor,
    run: RunState,
    ordinal: int,
) -> UpsertReport:
    """Extract every not-yet-parsed hit and upsert the results in hit order."""
    todo = []
    for h in hits:
        if h.chunk_id not in run.parsed:
            run.parsed.add(h.chunk_id)
            todo.append(index.chunk(h.chunk_id))
    run.extracted.extend(c.chunk_id for c in todo)

    def work(chunk):
        try:
            return extractor.extract(chunk), None
        except Exception as exc:  # one bad chunk must not sink the batch
            return None, exc

    if len(todo) > 1 and run.max_workers > 1:
        with ThreadPoolExecutor(max_workers=run.max_workers) as pool:
            results = list(pool.map(work, todo))
    else:
        results = [work(c) for c in todo]

    report = UpsertReport()
    for chunk, (res, err) in zip(todo, results):
        if err is not None:
            log.warning("extraction failed for %s: %s", chunk.chunk_id, err)
            run.trace.add("extraction_error", chunk_id=chunk.chunk_id, error=str(err))
            report.failures += 1
            continue
        mentions, triples = res
        report = report + run.graph.upsert(mentions, triples, ordinal)
    return report


def cold_start(
    question: str,
    index: Index,
    extractor: Extractor,
    run: RunState,
    r: int = 10,
    ordinal: int = 1,
    stage: str = "cold_start",
) -> UpsertReport:
    hits = hybrid_search(index, question, r)
    run.trace.add("retrieval", stage=stage, ordinal=ordinal, query=question, hits=_hits_dict(hits))
    if not hits:
        log.warning("%s: no passages retrieved for %r", stage, question)
        run.trace.add("warning", stage=stage, message="no passages retrieved")
    report = _ingest(hits, index, extractor, run, ordinal)
    run.trace.add("upsert", stage=stage, ordinal=ordinal, report=report.to_dict())
    return report


def reseed_if_empty(
    sub_question: str,
    index: Index,
    extractor: Extractor,
    run: RunState,
    r: int = 10,
    ordinal: int = 1,
) -> UpsertReport | None:
    if run.graph.nodes:
        return None
    return cold_start(sub_question, index, extractor, run, r, ordinal, stage="reseed")


def augment_graph(
    frontier: Frontier,
    sub_question: str,
    index: Index,
    extractor: Extractor,
    run: RunState,
    k_passages: int = 20,
    ordinal: int = 1,
) -> UpsertReport:
    hits = frontier_conditioned_search(index, sub_question, frontier.entities, k_passages, exclude=run.parsed)
    run.trace.add(
        "retrieval",
        stage="augment",
        ordinal=ordinal,
        query=sub_question,
        frontier=sorted(frontier.entities),
        hits=_hits_dict(hits),
    )
    report = _ingest(hits, index, extractor, run, ordinal)
    run.trace.add("upsert", stage="augment", ordinal=ordinal, report=report.to_dict())
    return report


def _format_partials(sub_questions: Sequence[SubQuestion], partials: Sequence[PartialAnswer]) -> str:
    texts = {s.ordinal: s.text for s in sub_questions}
    lines = []
    for p in sorted(partials, key=lambda p: p.sub_question_ordinal):
        answer = p.answer_text if p.ok else "[no answer: provider error]"
        lines.append(f"({p.sub_question_ordinal}) {texts.get(p.sub_question_ordinal, '')}\n    {answer}")
    return "\n".join(lines)


def merge_answers(
    partials: Sequence[PartialAnswer],
    summaries: Sequence[str],
    llm,
    sub_questions: Sequence[SubQuestion] = (),
    template_dir=None,
) -> str:
    """Synthesize the partial answers (and summaries) into one account.

    Falls back to the partial answers concatenated in ordinal order.
    """
    ordered = sorted(partials, key=lambda p: p.sub_question_ordinal)
    prompt = render_template(
        "merge",
        {
            "partials": _format_partials(sub_questions, ordered),
            "summaries": "\n".join(f"- {s}" for s in summaries) or "(none)",
        },
        template_dir,
    )
    try:
        return llm.complete(PromptRequest("merge", prompt, "merge")).text.strip()
    except ProviderError as exc:
        log.warning("merge failed, concatenating partial answers: %s", exc)
        return "\n".join(p.answer_text for p in ordered if p.answer_text)


def finalize(question: str, merged: str, llm, template_dir=None) -> str:
    if not merged:
        return ""
    prompt = render_template("finalize", {"question": question, "merged": merged}, template_dir)
    try:
        return llm.complete(PromptRequest("finalize", prompt, "finalize", max_output_tokens=64)).text.strip()
    except ProviderError as exc:
        log.warning("finalize failed, returning merged text: %s", exc)
        return merged


# -- engine ------------------------------------------------------------------


class QAEngine:
    """An index, a model client and a configuration, ready to answer questions.

    Every call to :meth:`answer` builds a fresh graph, so independent
    questions can run concurrently on one instance.
    """

    def __init__(self, index: Index, llm: LLMClient, config: PipelineConfig | None = None) -> None:
        self.index = index
        self.llm = llm
        self.config = config or PipelineConfig()
        self.embedder = index.embedder or HashingEmbedder(self.config.embedding_dim)
        self._gazetteer = load_gazetteer(self.config.gazetteer) if self.config.gazetteer else ()

    @classmethod
    def from_path(
        cls, path: str | Path, config: PipelineConfig | None = None, llm: LLMClient | None = None
    ) -> "QAEngine":
        """Open a saved index, or load, chunk and index a JSONL corpus.

        Corpus errors surface here, before any model client is built.
        """
        config = config or PipelineConfig()
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                head = fh.read(len(MAGIC))
        except OSError as exc:
            raise CorpusLoadError(f"cannot read corpus or index {path}: {exc}") from exc
        if head == MAGIC:
            index = load_index(path)
        else:
            chunks = chunk_corpus(load_corpus(path), config.chunk_size_tokens, config.overlap_tokens)
            index = build_index(chunks, HashingEmbedder(config.embedding_dim))
        return cls(index, llm or make_llm(config.provider), config)

    def _extractor(self, llm) -> Extractor:
        if self.config.extractor == "llm":
            return LLMExtractor(llm, self.config.template_dir)
        return RuleExtractor(self._gazetteer)

    def answer(
        self,
        question: str,
        trace_path: str | Path | None = None,
        *,
        decompose_on: bool | None = None,
        reasoning_on: bool | None = None,
    ) -> AnswerRecord:
        cfg = self.config
        use_decomp = cfg.decompose if decompose_on is None else decompose_on
        use_reason = cfg.reasoning if reasoning_on is None else reasoning_on
        trace = Trace(trace_path)
        llm = self.llm.traced(trace)
        tdir = cfg.template_dir
        extractor = self._extractor(llm)
        run = RunState(KnowledgeGraph(cfg.min_edge_support), trace, max_workers=cfg.provider.max_in_flight)
        trace.add(
            "run_start",
            question=question,
            ablation={"decompose": use_decomp, "reasoning": use_reason},
            config=cfg.to_dict(),
        )

        if use_decomp:
            subs = decompose(question, llm, cfg.max_subquestions, tdir, trace)
        else:
            subs = [SubQuestion(1, question)]
            trace.add("decomposition", sub_questions=[question], fallback="disabled")

        cold_start(subs[0].text, self.index, extractor, run, cfg.reseed_r, ordinal=1)

        partials: list[PartialAnswer] = []
        all_seeds: set[str] = set()
        for j, sq in enumerate(subs):
            reseed_if_empty(sq.text, self.index, extractor, run, cfg.reseed_r, sq.ordinal)
            stamp = max((n.first_seen_subquestion for n in run.graph.nodes.values()), default=0)
            frontier = Frontier()
            if use_reason:
                seeds = select_seeds(sq.text, run.graph, self.embedder, cfg.k_seeds, sq.ordinal)
                all_seeds.update(seeds.names)
                paths = []
                reach: dict[str, int] = {}
                for name in seeds.names:
                    for v, d in run.graph.bfs_reachable(name, cfg.bfs_depth).items():
                        reach[v] = min(d, reach.get(v, d))
                    paths.extend(
                        run.graph.enumerate_paths(
                            name, cfg.bfs_depth, cfg.caps.max_paths_per_seed, cfg.caps.max_branch
                        )
                    )
                ctx = build_context(paths, cfg.context_budget_chars)
                partial = answer_subquestion(sq.text, ctx, llm, sq.ordinal, tdir)
                frontier.entities = set(sorted(reach, key=lambda v: (reach[v], v))[: cfg.max_frontier])
                frontier.relations = {e.relation_label for p in ctx.source_paths for e in p.edges}
                seed_list = [[n, s] for n, s in seeds.seeds]
            else:
                hits = hybrid_search(self.index, sq.text, cfg.k_passages)
                trace.add("retrieval", stage="passages", ordinal=sq.ordinal, query=sq.text, hits=_hits_dict(hits))
                _ingest(hits, self.index, extractor, run, sq.ordinal)
                passages, used = [], 0
                for h in hits:
                    text = self.index.chunk(h.chunk_id).text
                    if used + len(text) + 1 > cfg.context_budget_chars:
                        break
                    passages.append(text)
                    used += len(text) + 1
                ctx = EvidenceContext()
                partial = answer_subquestion(sq.text, ctx, llm, sq.ordinal, tdir, context_text="\n".join(passages))
                seed_list = []
            partials.append(partial)
            trace.add(
                "subquestion",
                ordinal=sq.ordinal,
                text=sq.text,
                reasoning=use_reason,
                graph_nodes=len(run.graph.nodes),
                graph_edges=len(run.graph.edges),
                max_node_stamp=stamp,
                seeds=seed_list,
                chains=ctx.chains,
                dropped_count=ctx.dropped_count,
                prompt_hash=partial.prompt_hash,
                answer=partial.answer_text,
                error=partial.error,
            )
            if j + 1 < len(subs):
                trace.add("frontier", ordinal=sq.ordinal, entities=sorted(frontier.entities),
                          relations=sorted(frontier.relations))
                augment_graph(frontier, subs[j + 1].text, self.index, extractor, run, cfg.k_passages, sq.ordinal)

        summaries = self._summaries(run.graph, all_seeds, llm, trace) if cfg.use_communities else []
        merged = merge_answers(partials, summaries, llm, subs, tdir)
        trace.add("merge", text=merged)
        final = finalize(question, merged, llm, tdir)
        trace.add("final", answer=final)
        trace.add("graph", graph=run.graph.to_dict())
        return AnswerRecord(question, subs, partials, merged, final, summaries, trace, run.graph)

    def _summaries(self, graph: KnowledgeGraph, seeds: set[str], llm, trace: Trace) -> list[str]:
        if not graph.nodes or not seeds:
            return []
        comms = detect_communities(graph, seed=self.config.community_seed)
        out = []
        for c in comms:
            if not c.members & seeds:
                continue
            chunk_ids = sorted({cid for m in c.members for cid in graph.nodes[m].support_chunk_ids})
            texts = [self.index.chunk(cid).text for cid in chunk_ids if cid in self.index.chunks]
            s = summarize_community(c, texts, llm, self.config.template_dir)
            if s:
                out.append(s)
        trace.add(
            "communities",
            communities=[{"id": c.id, "members": sorted(c.members), "summary": c.summary} for c in comms],
        )
        return out


def answer(
    question: str,
    corpus: str | Path | Index | QAEngine,
    config: PipelineConfig | None = None,
    llm: LLMClient | None = None,
    trace_path: str | Path | None = None,
) -> AnswerRecord:
    """One-shot convenience wrapper around :class:`QAEngine`."""
    if isinstance(corpus, QAEngine):
        engine = corpus
    elif isinstance(corpus, Index):
        config = config or PipelineConfig()
        engine = QAEngine(corpus, llm or make_llm(config.provider), config)
    else:
        engine = QAEngine.from_path(corpus, config, llm)
    return engine.answer(question, trace_path)
