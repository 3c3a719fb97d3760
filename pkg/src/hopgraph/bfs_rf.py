"""Per-sub-question reasoning flow: seeds -> BFS paths -> evidence chains -> partial answer."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ProviderError
from .graph import FORWARD, BACKWARD, EvidencePath, KnowledgeGraph
from .llm import PromptRequest, prompt_hash, render_template

__all__ = [
    "SeedSelection",
    "EvidenceContext",
    "PartialAnswer",
    "select_seeds",
    "describe_path",
    "parse_chain",
    "build_context",
    "answer_subquestion",
    "NO_EVIDENCE",
]

log = logging.getLogger(__name__)

NO_EVIDENCE = "No graph evidence was found for this question."


@dataclass
class SeedSelection:
    sub_question_ordinal: int
    seeds: list[tuple[str, float]]

    @property
    def names(self) -> list[str]:
        return [s for s, _ in self.seeds]

    def __bool__(self) -> bool:
        return bool(self.seeds)


@dataclass
class EvidenceContext:
    chains: list[str] = field(default_factory=list)
    source_paths: list[EvidencePath] = field(default_factory=list)
    supporting_chunk_ids: set[str] = field(default_factory=set)
    dropped_count: int = 0

    @property
    def rendered(self) -> str:
        return "\n".join(self.chains)


@dataclass
class PartialAnswer:
    sub_question_ordinal: int
    answer_text: str
    evidence: EvidenceContext
    provider_trace_id: str = ""
    error: str | None = None
    prompt_hash: str = ""

    @property
    def ok(self) -> bool:
        return self.error is None


def select_seeds(
    sub_question: str,
    graph: KnowledgeGraph,
    embedder,
    k_seeds: int = 5,
    ordinal: int = 0,
) -> SeedSelection:
    """Top ``k_seeds`` nodes by cosine between the question and each node's
    label text (canonical name plus aliases). An empty graph yields an empty
    selection, which callers treat as the signal to re-seed."""
    if not graph.nodes:
        return SeedSelection(ordinal, [])
    q = np.asarray(embedder.embed(sub_question), dtype=np.float64)
    names = sorted(graph.nodes)
    mat = np.stack([np.asarray(embedder.embed(graph.nodes[n].label_text())) for n in names])
    sims = (mat @ q).tolist()
    ranked = sorted(zip(names, sims), key=lambda x: (-x[1], x[0]))[:k_seeds]
    return SeedSelection(ordinal, [(n, float(s)) for n, s in ranked])


def describe_path(path: EvidencePath) -> str:
    """Render ``a -- (r) --> b`` for edges walked head to tail and
    ``a <-- (r) -- b`` for edges walked backwards."""
    parts = [path.nodes[0]]
    for e, nxt in zip(path.edges, path.nodes[1:]):
        if e.direction == FORWARD:
            parts.append(f" -- ({e.relation_label}) --> {nxt}")
        else:
            parts.append(f" <-- ({e.relation_label}) -- {nxt}")
    return "".join(parts)


_SEGMENT = re.compile(r" (?:-- \((?P<f>.*?)\) -->|<-- \((?P<b>.*?)\) --) ")


def parse_chain(chain: str) -> tuple[list[str], list[tuple[str, str]]]:
    """Inverse of :func:`describe_path` (node names, (label, direction) pairs)."""
    nodes, rels = [], []
    pos = 0
    for m in _SEGMENT.finditer(chain):
        nodes.append(chain[pos : m.start()])
        if m.group("f") is not None:
            rels.append((m.group("f"), FORWARD))
        else:
            rels.append((m.group("b"), BACKWARD))
        pos = m.end()
    nodes.append(chain[pos:])
    return nodes, rels


def build_context(paths: Sequence[EvidencePath], budget_chars: int = 8000) -> EvidenceContext:
    """Render paths in order, dropping repeats, stopping at the first chain
    that would push the newline-joined text past ``budget_chars``."""
    ctx = EvidenceContext()
    seen: set[str] = set()
    used = 0
    overflow = False
    for p in paths:
        chain = describe_path(p)
        if chain in seen:
            continue
        seen.add(chain)
        if overflow:
            ctx.dropped_count += 1
            continue
        cost = len(chain) + (1 if ctx.chains else 0)
        if used + cost > budget_chars:
            overflow = True
            ctx.dropped_count += 1
            continue
        used += cost
        ctx.chains.append(chain)
        ctx.source_paths.append(p)
        for e in p.edges:
            ctx.supporting_chunk_ids.update(e.support_chunk_ids)
    return ctx


def answer_subquestion(
    sub_question: str,
    context: EvidenceContext,
    llm,
    ordinal: int = 0,
    template_dir=None,
    context_text: str | None = None,
) -> PartialAnswer:
    """Ask the model to answer one sub-question from its evidence.

    ``context_text`` overrides the rendered chains (used when graph
    reasoning is switched off and raw passages stand in for evidence).
    Provider failures come back as an empty answer with ``error`` set.
    """
    evidence = context.rendered if context_text is None else context_text
    prompt = render_template(
        "subanswer",
        {"question": sub_question, "evidence": evidence or NO_EVIDENCE},
        template_dir,
    )
    phash = prompt_hash(prompt)
    try:
        comp = llm.complete(PromptRequest("subanswer", prompt, "subanswer"))
    except ProviderError as exc:
        log.warning("sub-question %d unanswered: %s", ordinal, exc)
        return PartialAnswer(ordinal, "", context, error=str(exc), prompt_hash=phash)
    return PartialAnswer(ordinal, comp.text.strip(), context, comp.provider_trace_id, prompt_hash=phash)
