"""Entity and relation extraction from chunks.

Two backends share the :class:`Extractor` interface: :class:`RuleExtractor`, a
deterministic pattern matcher used offline, and :class:`LLMExtractor`, which
asks the model for a JSON list of entities and relations.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

from .corpus import Chunk
from .errors import ExtractionError, ProviderError
from .llm import PromptRequest, render_template

__all__ = [
    "EntityMention",
    "RelationTriple",
    "Extractor",
    "RuleExtractor",
    "LLMExtractor",
    "canonicalize",
    "load_gazetteer",
    "RELATED_TO",
]

log = logging.getLogger(__name__)

RELATED_TO = "related_to"
_ARTICLE = re.compile(r"^(?:the|a|an)\s+")
ALIAS_SEP = "|"


def canonicalize(surface: str) -> str:
    """Case-fold, trim, collapse whitespace, drop one leading article."""
    s = " ".join(surface.casefold().split())
    return _ARTICLE.sub("", s)


@dataclass
class EntityMention:
    surface: str
    canonical: str
    attributes: dict[str, str] = field(default_factory=dict)
    chunk_id: str = ""

    def aliases(self) -> set[str]:
        out = {self.surface}
        extra = self.attributes.get("aliases", "")
        out.update(a for a in extra.split(ALIAS_SEP) if a)
        return out


@dataclass(frozen=True)
class RelationTriple:
    head_canonical: str
    relation_label: str
    tail_canonical: str
    support_chunk_id: str
    confidence: float = 1.0


class Extractor(Protocol):
    def extract(self, chunk: Chunk) -> tuple[list[EntityMention], list[RelationTriple]]: ...


def load_gazetteer(path: str | Path) -> list[str]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")]


# -- rule backend ------------------------------------------------------------

_SENTENCE = re.compile(r"[^.!?]+[.!?]*")
_WORD = re.compile(r"[A-Za-z0-9][\w'’-]*")
_APPOSITIVE = re.compile(r"\s*,\s+(?:the|a|an)\s+([^,.;:!?]{1,60}?)\s*,", re.IGNORECASE)
_POSSESSIVE = re.compile(r"['’]s?$")

# capitalised words that are never entity names on their own
_CAP_STOP = frozenset(
    """a an the this that these those which who whom whose what when where why how
    he she it they we you i his her its their our your my him them us
    in on at after before during since and but or if as by for from with of to
    into onto over under while then there here is was are were be been
    not no yes all some any each every many most other such""".split()
)
_LOWER_STOP = frozenset(
    """this his its was as us thus across always perhaps towards afterwards besides
    sometimes has does is whereas unless yes less""".split()
)
_VERBS = frozenset(
    """is was are were became become made make kill killed destroy create hid hide
    found find led lead wrote write won win met meet gave give took take married marry
    born bore built build sent send sold sell ran run rode ride fought fight taught teach
    caught catch held hold knew know saw see told tell brought bring stole steal
    defeated founded owned owns""".split()
)
_AUX = frozenset("is was are were be been being has have had does did".split())


def _is_verbish(word: str) -> bool:
    if word in _VERBS:
        return True
    if word in _LOWER_STOP or len(word) < 4:
        return False
    if word.endswith("ed"):
        return True
    return word.endswith("s") and not word.endswith(("ss", "us", "is", "ous"))


@dataclass
class _Span:
    start: int
    end: int
    surface: str
    alias: str = ""
    kind: str = "capitalized"


class RuleExtractor:
    """Deterministic extractor.

    Entities are maximal runs of capitalised words (leading and trailing
    function words such as "The" or "Which" dropped; a possessive ends the
    run) plus case-insensitive gazetteer matches. An appositive
    ``"X, the Y,"`` records ``Y`` as an alias of ``X`` instead of a mention.

    Relations: two neighbouring mentions in one sentence are linked by the
    first verb-like lowercase word between them, auxiliaries ("was") losing
    to a main verb (confidence 0.9); non-neighbouring pairs in a sentence,
    pairs with no verb between them and pairs that never share a sentence
    get ``related_to``. All ``related_to`` edges carry confidence 0.3.
    """

    verb_confidence = 0.9
    weak_confidence = 0.3

    def __init__(self, gazetteer: Iterable[str] = ()) -> None:
        terms = sorted({t.strip() for t in gazetteer if t.strip()}, key=lambda t: (-len(t), t))
        self._gaz = [
            re.compile(r"(?<!\w)" + re.escape(t) + r"(?!\w)", re.IGNORECASE) for t in terms
        ]

    # spans -------------------------------------------------------------

    def _spans(self, sentence: str) -> list[_Span]:
        taken: list[tuple[int, int]] = []
        spans: list[_Span] = []

        def free(a: int, b: int) -> bool:
            return all(b <= s or a >= e for s, e in taken)

        for pat in self._gaz:
            for m in pat.finditer(sentence):
                if free(m.start(), m.end()):
                    spans.append(_Span(m.start(), m.end(), m.group(0), kind="gazetteer"))
                    taken.append((m.start(), m.end()))

        words = list(_WORD.finditer(sentence))
        runs: list[list[re.Match]] = []
        cur: list[re.Match] = []
        for w in words:
            cap = w.group(0)[0].isupper()
            contiguous = bool(cur) and sentence[cur[-1].end() : w.start()].isspace()
            if cap and cur and contiguous and not _POSSESSIVE.search(cur[-1].group(0)):
                cur.append(w)
                continue
            if cur:
                runs.append(cur)
            cur = [w] if cap else []
        if cur:
            runs.append(cur)

        for run in runs:
            while run and run[0].group(0).casefold() in _CAP_STOP:
                run = run[1:]
            while run and run[-1].group(0).casefold() in _CAP_STOP:
                run = run[:-1]
            if not run:
                continue
            start, end = run[0].start(), run[-1].end()
            poss = _POSSESSIVE.search(run[-1].group(0))
            if poss and run[-1].group(0) != poss.group(0):
                end -= len(poss.group(0))
            if free(start, end):
                spans.append(_Span(start, end, sentence[start:end]))
                taken.append((start, end))

        spans.sort(key=lambda s: s.start)
        # appositives: alias the preceding span, drop spans inside the appositive
        out: list[_Span] = []
        skip_until = -1
        for sp in spans:
            if sp.start < skip_until:
                continue
            m = _APPOSITIVE.match(sentence, sp.end)
            if m:
                sp.alias = " ".join(m.group(1).split())
                skip_until = m.end()
            out.append(sp)
        return out

    def _analyse(self, chunk: Chunk):
        sentences = []
        for sm in _SENTENCE.finditer(chunk.text):
            text = sm.group(0)
            spans = [s for s in self._spans(text) if canonicalize(s.surface)]
            sentences.append((text, spans))
        return sentences

    # public API ----------------------------------------------------------

    def extract_entities(self, chunk: Chunk) -> list[EntityMention]:
        return self._mentions(self._analyse(chunk), chunk)

    def _mentions(self, sentences, chunk: Chunk) -> list[EntityMention]:
        by_canon: dict[str, EntityMention] = {}
        for _, spans in sentences:
            for sp in spans:
                canon = canonicalize(sp.surface)
                m = by_canon.get(canon)
                if m is None:
                    m = EntityMention(sp.surface, canon, {"type": sp.kind}, chunk.chunk_id)
                    by_canon[canon] = m
                if sp.alias:
                    al = set(filter(None, m.attributes.get("aliases", "").split(ALIAS_SEP)))
                    al.add(sp.alias)
                    m.attributes["aliases"] = ALIAS_SEP.join(sorted(al))
        return list(by_canon.values())

    def link_relations(self, chunk: Chunk, mentions: Sequence[EntityMention]) -> list[RelationTriple]:
        return self._link(self._analyse(chunk), chunk, mentions)

    def _link(self, sentences, chunk: Chunk, mentions: Sequence[EntityMention]) -> list[RelationTriple]:
        allowed = {m.canonical for m in mentions}
        first_pos: dict[str, tuple[int, int]] = {}
        shared: dict[tuple[str, str], str] = {}

        for si, (text, spans) in enumerate(sentences):
            spans = [s for s in spans if canonicalize(s.surface) in allowed]
            for sp in spans:
                first_pos.setdefault(canonicalize(sp.surface), (si, sp.start))
            for i in range(len(spans)):
                for j in range(i + 1, len(spans)):
                    a, b = canonicalize(spans[i].surface), canonicalize(spans[j].surface)
                    if a == b:
                        continue
                    key = (a, b) if (a, b) not in shared and (b, a) not in shared else None
                    if key is None:
                        continue
                    label = RELATED_TO
                    if j == i + 1:
                        label = self._verb_between(text, spans[i].end, spans[j].start)
                    shared[key] = label

        triples = []
        for (a, b), label in shared.items():
            conf = self.weak_confidence if label == RELATED_TO else self.verb_confidence
            triples.append(RelationTriple(a, label, b, chunk.chunk_id, conf))
        seen = set(shared) | {(b, a) for a, b in shared}
        names = sorted(first_pos, key=lambda c: first_pos[c])
        for i in range(len(names)):
            for j in range(i + 1, len(names)):
                if (names[i], names[j]) not in seen:
                    triples.append(
                        RelationTriple(names[i], RELATED_TO, names[j], chunk.chunk_id, self.weak_confidence)
                    )
        return triples

    @staticmethod
    def _verb_between(text: str, start: int, end: int) -> str:
        appos = _APPOSITIVE.match(text, start)
        if appos and appos.end() <= end:
            start = appos.end()
        verbs = [
            w.group(0).lower()
            for w in _WORD.finditer(text, start, end)
            if w.group(0)[0].islower() and _is_verbish(w.group(0).lower())
        ]
        main = [v for v in verbs if v not in _AUX]
        if main:
            return main[0]
        return verbs[0] if verbs else RELATED_TO

    def extract(self, chunk: Chunk) -> tuple[list[EntityMention], list[RelationTriple]]:
        sentences = self._analyse(chunk)
        mentions = self._mentions(sentences, chunk)
        return mentions, self._link(sentences, chunk, mentions)


# -- LLM backend -------------------------------------------------------------

_FENCE = re.compile(r"^```(?:json)?\s*|\s*```$", re.MULTILINE)


def _parse_extraction(raw: str, chunk: Chunk):
    data = json.loads(_FENCE.sub("", raw.strip()))
    if not isinstance(data, dict):
        raise ValueError("top level must be an object")
    ents, rels = data.get("entities"), data.get("relations", [])
    if not isinstance(ents, list) or not isinstance(rels, list):
        raise ValueError("'entities' and 'relations' must be lists")

    mentions: dict[str, EntityMention] = {}
    for e in ents:
        if not isinstance(e, dict) or not isinstance(e.get("entity"), str):
            raise ValueError(f"bad entity record {e!r}")
        canon = canonicalize(e["entity"])
        if not canon or canon in mentions:
            continue
        attrs = {"type": str(e.get("type", "entity"))}
        aliases = e.get("aliases") or []
        if aliases:
            attrs["aliases"] = ALIAS_SEP.join(sorted(str(a) for a in aliases))
        mentions[canon] = EntityMention(e["entity"].strip(), canon, attrs, chunk.chunk_id)

    triples: dict[tuple[str, str, str], RelationTriple] = {}
    for r in rels:
        if not isinstance(r, dict) or not all(isinstance(r.get(k), str) for k in ("head", "relation", "tail")):
            raise ValueError(f"bad relation record {r!r}")
        h, t = canonicalize(r["head"]), canonicalize(r["tail"])
        label = " ".join(r["relation"].lower().split())
        if h == t or not label:
            continue
        if h not in mentions or t not in mentions:
            log.info("dropping relation with unlisted endpoint: %r", r)
            continue
        triples.setdefault((h, label, t), RelationTriple(h, label, t, chunk.chunk_id, 1.0))
    return list(mentions.values()), list(triples.values())


class LLMExtractor:
    """Model-backed extractor: one JSON request per chunk, one repair retry."""

    def __init__(self, llm, template_dir: str | Path | None = None, max_output_tokens: int = 1024) -> None:
        self.llm = llm
        self.template_dir = template_dir
        self.max_output_tokens = max_output_tokens
        self._memo: dict[str, tuple[list[EntityMention], list[RelationTriple]]] = {}
        self._lock = threading.Lock()

    def _ask(self, template: str, variables: dict[str, str]) -> str:
        prompt = render_template(template, variables, self.template_dir)
        req = PromptRequest(template, prompt, "extract", max_output_tokens=self.max_output_tokens)
        try:
            return self.llm.complete(req).text
        except ProviderError as exc:
            raise ExtractionError(f"extraction call failed: {exc}") from exc

    def extract(self, chunk: Chunk) -> tuple[list[EntityMention], list[RelationTriple]]:
        with self._lock:
            if chunk.chunk_id in self._memo:
                return self._memo[chunk.chunk_id]
        raw = self._ask("extract", {"text": chunk.text})
        try:
            result = _parse_extraction(raw, chunk)
        except (ValueError, json.JSONDecodeError) as exc:
            raw2 = self._ask("extract_repair", {"text": chunk.text, "response": raw, "error": str(exc)})
            try:
                result = _parse_extraction(raw2, chunk)
            except (ValueError, json.JSONDecodeError) as exc2:
                raise ExtractionError(
                    f"unparseable extraction for {chunk.chunk_id}: {exc2}", raw_response=raw2
                ) from exc2
        with self._lock:
            self._memo[chunk.chunk_id] = result
        return result

    def extract_entities(self, chunk: Chunk) -> list[EntityMention]:
        return self.extract(chunk)[0]

    def link_relations(self, chunk: Chunk, mentions: Sequence[EntityMention]) -> list[RelationTriple]:
        allowed = {m.canonical for m in mentions}
        return [
            t
            for t in self.extract(chunk)[1]
            if t.head_canonical in allowed and t.tail_canonical in allowed
        ]
