"""Global hybrid index: BM25 inverted index + dense vectors, fused by RRF."""

from __future__ import annotations

import hashlib
import io
import json
import math
import re
import struct
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Protocol, Sequence

import numpy as np

from .corpus import Chunk
from .errors import ConfigurationError, IndexFormatError, IndexingError, ValidationError

__all__ = [
    "RetrievalHit",
    "EmbeddingProvider",
    "HashingEmbedder",
    "LexicalIndex",
    "VectorIndex",
    "Index",
    "analyze",
    "build_index",
    "lexical_search",
    "vector_search",
    "hybrid_search",
    "frontier_conditioned_search",
    "expand_query",
    "save_index",
    "load_index",
]

_WORD = re.compile(r"\w+", re.UNICODE)


def analyze(text: str) -> list[str]:
    """Lexical analysis shared by BM25 indexing and querying."""
    return _WORD.findall(text.lower())


@dataclass(frozen=True)
class RetrievalHit:
    chunk_id: str
    score: float
    rank: int
    source: Literal["lexical", "vector", "fused"]


class EmbeddingProvider(Protocol):
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...


class HashingEmbedder:
    """Deterministic offline embedder.

    Lowercased word unigrams and bigrams are hashed (BLAKE2b, so the mapping
    is stable across processes) into ``dimension`` buckets and the count
    vector is L2-normalised. Text without words maps to the zero vector.
    """

    kind = "hashing"

    def __init__(self, dimension: int = 256) -> None:
        if dimension <= 0:
            raise ConfigurationError("embedding dimension must be positive")
        self.dimension = dimension

    def _bucket(self, feature: str) -> int:
        digest = hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little") % self.dimension

    def embed(self, text: str) -> np.ndarray:
        words = analyze(text)
        vec = np.zeros(self.dimension, dtype=np.float64)
        for w in words:
            vec[self._bucket("u:" + w)] += 1.0
        for a, b in zip(words, words[1:]):
            vec[self._bucket(f"b:{a} {b}")] += 1.0
        norm = np.linalg.norm(vec)
        if norm > 0:
            vec /= norm
        return vec

    def config(self) -> dict:
        return {"kind": self.kind, "dimension": self.dimension}


@dataclass
class LexicalIndex:
    postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    k1: float = 1.2
    b: float = 0.75

    @property
    def N(self) -> int:
        return len(self.doc_lengths)

    @property
    def avg_doc_length(self) -> float:
        if not self.doc_lengths:
            return 0.0
        return sum(self.doc_lengths.values()) / len(self.doc_lengths)

    @classmethod
    def from_chunks(cls, chunks: Sequence[Chunk], k1: float = 1.2, b: float = 0.75) -> "LexicalIndex":
        postings: dict[str, list[tuple[str, int]]] = {}
        lengths: dict[str, int] = {}
        for ch in chunks:
            terms = analyze(ch.text)
            lengths[ch.chunk_id] = len(terms)
            for term, tf in Counter(terms).items():
                postings.setdefault(term, []).append((ch.chunk_id, tf))
        return cls(postings=postings, doc_lengths=lengths, k1=k1, b=b)

    def idf(self, term: str) -> float:
        df = len(self.postings.get(term, ()))
        return math.log(1.0 + (self.N - df + 0.5) / (df + 0.5))

    def scores(self, query: str) -> dict[str, float]:
        avgdl = self.avg_doc_length
        acc: dict[str, float] = {}
        for term in analyze(query):
            plist = self.postings.get(term)
            if not plist:
                continue
            idf = self.idf(term)
            for cid, tf in plist:
                dl = self.doc_lengths[cid]
                norm = 1.0 - self.b + self.b * (dl / avgdl if avgdl > 0 else 0.0)
                acc[cid] = acc.get(cid, 0.0) + idf * tf * (self.k1 + 1.0) / (tf + self.k1 * norm)
        return acc


@dataclass
class VectorIndex:
    chunk_ids: list[str]
    matrix: np.ndarray  # (N, dimension), unit rows

    @property
    def dimension(self) -> int:
        return int(self.matrix.shape[1])

    @property
    def embeddings(self) -> dict[str, np.ndarray]:
        return {cid: self.matrix[i] for i, cid in enumerate(self.chunk_ids)}


@dataclass
class Index:
    """Immutable-after-build container for both halves of the global index."""

    chunks: dict[str, Chunk]
    lexical: LexicalIndex
    vector: VectorIndex | None
    embedder: EmbeddingProvider | None = None
    rrf_k: int = 60
    fusion_depth: int = 50
    _order: list[str] = field(default_factory=list, repr=False)

    @property
    def N(self) -> int:
        return len(self.chunks)

    def chunk(self, chunk_id: str) -> Chunk:
        return self.chunks[chunk_id]


def build_index(
    chunks: Sequence[Chunk],
    embedder: EmbeddingProvider | None,
    *,
    k1: float = 1.2,
    b: float = 0.75,
    rrf_k: int = 60,
    fusion_depth: int = 50,
) -> Index:
    if not chunks:
        raise ValidationError("cannot build an index over zero chunks")
    by_id: dict[str, Chunk] = {}
    for ch in chunks:
        if ch.chunk_id in by_id:
            raise ValidationError(f"duplicate chunk id {ch.chunk_id!r}")
        by_id[ch.chunk_id] = ch

    lexical = LexicalIndex.from_chunks(chunks, k1=k1, b=b)
    vector = None
    if embedder is not None:
        rows = np.zeros((len(chunks), embedder.dimension), dtype=np.float64)
        for i, ch in enumerate(chunks):
            try:
                v = np.asarray(embedder.embed(ch.text), dtype=np.float64)
            except Exception as exc:
                raise IndexingError(f"embedding failed for chunk {ch.chunk_id!r}: {exc}") from exc
            if v.shape != (embedder.dimension,):
                raise IndexingError(
                    f"embedder returned shape {v.shape} for chunk {ch.chunk_id!r}, "
                    f"expected ({embedder.dimension},)"
                )
            rows[i] = v
        vector = VectorIndex(chunk_ids=[c.chunk_id for c in chunks], matrix=rows)
    return Index(
        chunks=by_id,
        lexical=lexical,
        vector=vector,
        embedder=embedder,
        rrf_k=rrf_k,
        fusion_depth=fusion_depth,
        _order=[c.chunk_id for c in chunks],
    )


def _ranked(
    scored: Iterable[tuple[str, float]], k: int, source: str
) -> list[RetrievalHit]:
    ordered = sorted(scored, key=lambda cs: (-cs[1], cs[0]))[:k]
    return [RetrievalHit(cid, float(s), i + 1, source) for i, (cid, s) in enumerate(ordered)]


def lexical_search(index: Index, query: str, k: int) -> list[RetrievalHit]:
    if k <= 0:
        raise ConfigurationError("k must be positive")
    return _ranked(index.lexical.scores(query).items(), k, "lexical")


def vector_search(
    index: Index, query: str, k: int, embedder: EmbeddingProvider | None = None
) -> list[RetrievalHit]:
    """Exhaustive cosine ranking over every stored chunk vector.

    A query that embeds to the zero vector yields no hits.
    """
    if k <= 0:
        raise ConfigurationError("k must be positive")
    embedder = embedder or index.embedder
    if index.vector is None or embedder is None:
        return []
    if embedder.dimension != index.vector.dimension:
        raise ConfigurationError(
            f"embedder dimension {embedder.dimension} != index dimension {index.vector.dimension}"
        )
    q = np.asarray(embedder.embed(query), dtype=np.float64)
    if not np.any(q):
        return []
    sims = index.vector.matrix @ q
    return _ranked(zip(index.vector.chunk_ids, sims.tolist()), k, "vector")


def hybrid_search(
    index: Index, query: str, k: int, embedder: EmbeddingProvider | None = None
) -> list[RetrievalHit]:
    """Reciprocal-rank fusion of the lexical and dense rankings.

    Each list is cut at ``index.fusion_depth``; dense hits with non-positive
    cosine are dropped before fusion so a query sharing nothing with the
    corpus returns nothing.
    """
    if k <= 0:
        raise ConfigurationError("k must be positive")
    depth = index.fusion_depth
    lists = [lexical_search(index, query, depth)]
    dense = vector_search(index, query, depth, embedder)
    lists.append([h for h in dense if h.score > 0.0])

    fused: dict[str, float] = {}
    for hits in lists:
        for h in hits:
            fused[h.chunk_id] = fused.get(h.chunk_id, 0.0) + 1.0 / (index.rrf_k + h.rank)
    return _ranked(fused.items(), k, "fused")


def expand_query(sub_question: str, frontier: Iterable[str]) -> str:
    names = sorted(set(frontier))
    return " ".join([sub_question, *names]) if names else sub_question


def frontier_conditioned_search(
    index: Index,
    sub_question: str,
    frontier: Iterable[str],
    k: int,
    exclude: Iterable[str] = (),
    embedder: EmbeddingProvider | None = None,
) -> list[RetrievalHit]:
    """Hybrid search on the sub-question expanded with frontier entity names,
    skipping chunks in ``exclude`` (those already parsed this run)."""
    excluded = set(exclude)
    query = expand_query(sub_question, frontier)
    hits = hybrid_search(index, query, k + len(excluded), embedder)
    kept = [h for h in hits if h.chunk_id not in excluded][:k]
    return [RetrievalHit(h.chunk_id, h.score, i + 1, "fused") for i, h in enumerate(kept)]


# -- persistence -------------------------------------------------------------

MAGIC = b"HOPGRAPH-IDX\x00"
FORMAT_VERSION = 1


def save_index(index: Index, path: str | Path) -> None:
    """Write ``index`` as MAGIC | u16 version | u64 header length | JSON header | .npy vectors."""
    emb = index.embedder
    if emb is not None and not isinstance(emb, HashingEmbedder):
        emb_cfg = {"kind": type(emb).__name__, "dimension": emb.dimension}
    else:
        emb_cfg = emb.config() if emb is not None else None
    header = {
        "params": {
            "k1": index.lexical.k1,
            "b": index.lexical.b,
            "rrf_k": index.rrf_k,
            "fusion_depth": index.fusion_depth,
        },
        "embedder": emb_cfg,
        "chunks": [
            {
                "chunk_id": c.chunk_id,
                "doc_id": c.doc_id,
                "ordinal": c.ordinal,
                "token_start": c.token_start,
                "token_end": c.token_end,
                "text": c.text,
            }
            for c in (index.chunks[cid] for cid in index._order)
        ],
        "doc_lengths": index.lexical.doc_lengths,
        "postings": index.lexical.postings,
        "vector_ids": index.vector.chunk_ids if index.vector is not None else None,
    }
    blob = json.dumps(header, ensure_ascii=False).encode("utf-8")
    buf = io.BytesIO()
    if index.vector is not None:
        np.save(buf, index.vector.matrix, allow_pickle=False)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack(">HQ", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        fh.write(buf.getvalue())


def load_index(path: str | Path, embedder: EmbeddingProvider | None = None) -> Index:
    """Read an index written by :func:`save_index`.

    A hashing embedder is reconstructed from the header; any other embedder
    must be supplied by the caller.
    """
    data = Path(path).read_bytes()
    if not data.startswith(MAGIC):
        raise IndexFormatError(
            f"{path}: not a hopgraph index (bad magic header; expected format version {FORMAT_VERSION})"
        )
    off = len(MAGIC)
    try:
        version, hlen = struct.unpack(">HQ", data[off : off + 10])
    except struct.error as exc:
        raise IndexFormatError(f"{path}: truncated header") from exc
    if version != FORMAT_VERSION:
        raise IndexFormatError(
            f"{path}: index format version {version} unsupported (expected {FORMAT_VERSION})"
        )
    off += 10
    header = json.loads(data[off : off + hlen].decode("utf-8"))
    off += hlen

    params = header["params"]
    chunks = [Chunk(**c) for c in header["chunks"]]
    lexical = LexicalIndex(
        postings={t: [(cid, tf) for cid, tf in pl] for t, pl in header["postings"].items()},
        doc_lengths=header["doc_lengths"],
        k1=params["k1"],
        b=params["b"],
    )
    vector = None
    if header["vector_ids"] is not None:
        matrix = np.load(io.BytesIO(data[off:]), allow_pickle=False)
        vector = VectorIndex(chunk_ids=header["vector_ids"], matrix=matrix)
        emb_cfg = header["embedder"]
        if embedder is None and emb_cfg and emb_cfg["kind"] == HashingEmbedder.kind:
            embedder = HashingEmbedder(emb_cfg["dimension"])
    return Index(
        chunks={c.chunk_id: c for c in chunks},
        lexical=lexical,
        vector=vector,
        embedder=embedder,
        rrf_k=params["rrf_k"],
        fusion_depth=params["fusion_depth"],
        _order=[c.chunk_id for c in chunks],
    )
