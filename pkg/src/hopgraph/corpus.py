"""Corpus loading and overlapping token-window chunking."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

from .errors import ConfigurationError, CorpusLoadError, CorpusParseError, ValidationError

__all__ = [
    "Document",
    "Chunk",
    "Tokenizer",
    "load_corpus",
    "chunk_document",
    "chunk_corpus",
]


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str = ""


@dataclass(frozen=True)
class Chunk:
    """A token-window slice of one document; the unit of retrieval."""

    chunk_id: str
    doc_id: str
    ordinal: int
    token_start: int
    token_end: int
    text: str

    @property
    def n_tokens(self) -> int:
        return self.token_end - self.token_start


class Tokenizer:
    """Splits text into tokens and joins token runs back into text.

    The default is whitespace mode: a token is a maximal run of
    non-whitespace characters. Pass ``split`` (and optionally ``join``) to
    count tokens the way a particular model does.
    """

    def __init__(
        self,
        split: Callable[[str], list[str]] | None = None,
        join: Callable[[list[str]], str] | None = None,
    ) -> None:
        self._split = split
        self._join = join
        self.mode = "whitespace" if split is None else "provider"

    def tokenize(self, text: str) -> list[str]:
        if self._split is None:
            return text.split()
        return list(self._split(text))

    def detokenize(self, tokens: list[str]) -> str:
        if self._join is None:
            return " ".join(tokens)
        return self._join(tokens)


WHITESPACE = Tokenizer()


def load_corpus(path: str | Path) -> list[Document]:
    """Read a line-delimited JSON corpus (``{"id", "title"?, "text"}`` per line)."""
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusLoadError(f"cannot read corpus {path}: {exc}") from exc

    docs: list[Document] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusParseError(f"invalid JSON ({exc.msg})", lineno) from exc
        if not isinstance(rec, dict):
            raise CorpusParseError("record is not an object", lineno)
        doc_id, text, title = rec.get("id"), rec.get("text"), rec.get("title", "")
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusParseError("missing or non-string 'id'", lineno)
        if not isinstance(text, str):
            raise CorpusParseError("missing or non-string 'text'", lineno)
        if title is None:
            title = ""
        if not isinstance(title, str):
            raise CorpusParseError("non-string 'title'", lineno)
        if doc_id in seen:
            raise ValidationError(
                f"duplicate doc id {doc_id!r} on lines {seen[doc_id]} and {lineno}"
            )
        if not text.strip():
            raise ValidationError(f"document {doc_id!r} on line {lineno} has empty text")
        seen[doc_id] = lineno
        docs.append(Document(doc_id=doc_id, text=text, title=title))
    return docs


def chunk_document(
    doc: Document,
    chunk_size_tokens: int = 1200,
    overlap_tokens: int = 100,
    tokenizer: Tokenizer = WHITESPACE,
) -> list[Chunk]:
    """Split ``doc`` into windows of ``chunk_size_tokens`` advancing by
    ``chunk_size_tokens - overlap_tokens``; the last window is cut at the
    document end.
    """
    if chunk_size_tokens <= 0:
        raise ConfigurationError("chunk_size_tokens must be positive")
    if overlap_tokens < 0 or overlap_tokens >= chunk_size_tokens:
        raise ConfigurationError(
            f"overlap_tokens ({overlap_tokens}) must be in [0, chunk_size_tokens={chunk_size_tokens})"
        )
    tokens = tokenizer.tokenize(doc.text)
    if not tokens:
        raise ValidationError(f"document {doc.doc_id!r} has no tokens")

    n = len(tokens)
    stride = chunk_size_tokens - overlap_tokens
    chunks = []
    start = 0
    while True:
        end = min(start + chunk_size_tokens, n)
        ordinal = len(chunks)
        chunks.append(
            Chunk(
                chunk_id=f"{doc.doc_id}#{ordinal}",
                doc_id=doc.doc_id,
                ordinal=ordinal,
                token_start=start,
                token_end=end,
                text=tokenizer.detokenize(tokens[start:end]),
            )
        )
        if end == n:
            return chunks
        start += stride


def chunk_corpus(
    docs: Iterable[Document],
    chunk_size_tokens: int = 1200,
    overlap_tokens: int = 100,
    tokenizer: Tokenizer = WHITESPACE,
) -> list[Chunk]:
    out: list[Chunk] = []
    for doc in docs:
        out.extend(chunk_document(doc, chunk_size_tokens, overlap_tokens, tokenizer))
    return out
