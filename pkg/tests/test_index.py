from __future__ import annotations

import random

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import make_chunk
from oracles import brute_cosine, brute_rrf, naive_bm25
from hopgraph.corpus import chunk_corpus, load_corpus
from hopgraph.errors import ConfigurationError, IndexFormatError, ValidationError
from hopgraph.fixtures import CORPUS
from hopgraph.index import (
    MAGIC,
    HashingEmbedder,
    build_index,
    expand_query,
    frontier_conditioned_search,
    hybrid_search,
    lexical_search,
    load_index,
    save_index,
    vector_search,
)

VOCAB = ["horcrux", "nagini", "neville", "wand", "sword", "diary", "ring", "cup", "locket", "snake", "the", "of"]


def random_corpus(rng: random.Random, max_chunks: int = 50) -> dict[str, str]:
    n = rng.randint(1, max_chunks)
    return {f"c{i:02d}#0": " ".join(rng.choices(VOCAB, k=rng.randint(1, 20))) for i in range(n)}


def index_of(texts: dict[str, str], dim: int = 256, **kw):
    return build_index([make_chunk(t, cid) for cid, t in texts.items()], HashingEmbedder(dim), **kw)


# -- construction ---------------------------------------------------------------


def test_single_chunk_counts():
    idx = index_of({"d#0": "a b a"})
    assert idx.lexical.postings["a"] == [("d#0", 2)]
    assert idx.lexical.doc_lengths["d#0"] == 3
    assert idx.N == 1


def test_three_chunks_all_terms_resolvable():
    texts = {"a#0": "Voldemort creates Horcruxes", "b#0": "Nagini is a snake", "c#0": "Neville"}
    idx = index_of(texts)
    assert idx.N == 3
    for cid, t in texts.items():
        for w in t.lower().split():
            assert cid in {c for c, _ in idx.lexical.postings[w]}
    assert idx.lexical.avg_doc_length == pytest.approx(np.mean(list(idx.lexical.doc_lengths.values())))


def test_duplicate_chunk_id_rejected():
    with pytest.raises(ValidationError):
        build_index([make_chunk("x", "d#0"), make_chunk("y", "d#0")], HashingEmbedder())


def test_vectors_unit_norm():
    rng = random.Random(3)
    idx = index_of(random_corpus(rng))
    assert np.allclose(np.linalg.norm(idx.vector.matrix, axis=1), 1.0, atol=1e-6)


def test_embedder_deterministic_and_zero_for_empty():
    e = HashingEmbedder(64)
    assert np.array_equal(e.embed("Nagini the snake"), e.embed("Nagini the snake"))
    assert not np.any(e.embed("  ...  "))


# -- lexical ---------------------------------------------------------------------


def test_no_shared_term_empty():
    assert lexical_search(index_of({"a#0": "horcrux"}), "quidditch", 5) == []


def test_single_chunk_first_word():
    hits = lexical_search(index_of({"a#0": "nagini is a snake"}), "nagini", 5)
    assert [(h.chunk_id, h.rank) for h in hits] == [("a#0", 1)]


def test_three_chunk_horcrux_nagini_matches_oracle():
    texts = {
        "a#0": "Voldemort hid a horcrux in the diary",
        "b#0": "Nagini the snake became the final horcrux",
        "c#0": "Neville destroyed Nagini with the sword",
    }
    idx = index_of(texts)
    got = [(h.chunk_id, h.score) for h in lexical_search(idx, "horcrux nagini", 3)]
    want = naive_bm25(texts, "horcrux nagini")
    assert [c for c, _ in got] == [c for c, _ in want]
    assert [s for _, s in got] == pytest.approx([s for _, s in want], abs=1e-12)
    assert got[0][0] == "b#0"


def test_empty_query_empty_result():
    assert lexical_search(index_of({"a#0": "x y"}), "  !! ", 3) == []


def test_ties_by_chunk_id():
    idx = index_of({"b#0": "wand", "a#0": "wand", "c#0": "wand"})
    assert [h.chunk_id for h in lexical_search(idx, "wand", 3)] == ["a#0", "b#0", "c#0"]


@given(st.integers(0, 10_000))
def test_bm25_matches_naive_oracle(seed):
    rng = random.Random(seed)
    texts = random_corpus(rng)
    query = " ".join(rng.choices(VOCAB + ["quidditch"], k=rng.randint(1, 4)))
    idx = index_of(texts)
    got = lexical_search(idx, query, len(texts))
    want = naive_bm25(texts, query)
    assert [h.chunk_id for h in got] == [c for c, _ in want]
    assert [h.score for h in got] == pytest.approx([s for _, s in want], abs=1e-12)
    assert [h.rank for h in got] == list(range(1, len(got) + 1))


# -- dense -----------------------------------------------------------------------


def test_self_similarity_ranks_first():
    rng = random.Random(5)
    texts = random_corpus(rng, 10)
    idx = index_of(texts)
    _, text = sorted(texts.items())[0]
    top = vector_search(idx, text, 1)[0]
    assert top.score == pytest.approx(1.0, abs=1e-6)
    assert texts[top.chunk_id] == text


def test_k_larger_than_corpus_returns_all_sorted():
    texts = {f"c{i}#0": f"word{i} nagini" for i in range(4)}
    hits = vector_search(index_of(texts), "nagini", 10)
    assert len(hits) == 4
    assert all(a.score >= b.score for a, b in zip(hits, hits[1:]))


@pytest.mark.parametrize("seed", range(5))
def test_vector_matches_brute_cosine(seed):
    rng = random.Random(seed)
    texts = {f"c{i}#0": " ".join(rng.choices(VOCAB, k=rng.randint(2, 12))) for i in range(10)}
    idx = index_of(texts)
    query = " ".join(rng.choices(VOCAB, k=3))
    emb = HashingEmbedder()
    want = brute_cosine({c: emb.embed(t) for c, t in texts.items()}, emb.embed(query))
    got = vector_search(idx, query, 10)
    assert [h.score for h in got] == pytest.approx([s for _, s in want], abs=1e-9)
    # ids must agree wherever scores are not tied
    for h, (cid, s) in zip(got, want):
        if sum(1 for _, s2 in want if abs(s2 - s) < 1e-12) == 1:
            assert h.chunk_id == cid


def test_dimension_mismatch():
    idx = index_of({"a#0": "x"})
    with pytest.raises(ConfigurationError):
        vector_search(idx, "x", 1, HashingEmbedder(32))


# -- hybrid ----------------------------------------------------------------------


def test_rank_one_in_both_lists_scores_2_over_61():
    idx = index_of({"a#0": "nagini snake", "b#0": "wand", "c#0": "cup ring"})
    top = hybrid_search(idx, "nagini snake", 3)[0]
    assert top.chunk_id == "a#0"
    assert top.score == pytest.approx(2 / 61, abs=1e-15)


def test_nothing_matches_and_no_embedder():
    idx = build_index([make_chunk("nagini", "a#0")], None)
    assert hybrid_search(idx, "quidditch", 5) == []


@pytest.mark.parametrize("seed", range(10))
def test_hybrid_matches_brute_rrf(seed):
    rng = random.Random(100 + seed)
    texts = {f"c{i}#0": " ".join(rng.choices(VOCAB, k=rng.randint(2, 12))) for i in range(10)}
    idx = index_of(texts)
    query = " ".join(rng.choices(VOCAB, k=2))
    emb = HashingEmbedder()
    lex = [c for c, _ in naive_bm25(texts, query)]
    dense = [c for c, s in brute_cosine({c: emb.embed(t) for c, t in texts.items()}, emb.embed(query)) if s > 0]
    want = brute_rrf([lex[:50], dense[:50]])
    got = hybrid_search(idx, query, 10)
    assert [(h.chunk_id, h.score) for h in got] == [(c, pytest.approx(s, abs=1e-15)) for c, s in want]


def test_hybrid_rank_score_coherence_and_determinism():
    rng = random.Random(9)
    idx = index_of(random_corpus(rng))
    a = hybrid_search(idx, "nagini sword", 20)
    b = hybrid_search(idx, "nagini sword", 20)
    assert a == b
    assert all(x.score >= y.score for x, y in zip(a, a[1:]))


# -- frontier conditioning ---------------------------------------------------------


@pytest.fixture(scope="module")
def hp_index():
    return build_index(chunk_corpus(load_corpus(CORPUS)), HashingEmbedder())


def test_expand_query_sorted_dedup():
    assert expand_query("who?", ["nagini", "horcrux", "nagini"]) == "who? horcrux nagini"
    assert expand_query("who?", []) == "who?"


def test_empty_frontier_equals_hybrid(hp_index):
    q = "Who destroys the final Horcrux?"
    assert frontier_conditioned_search(hp_index, q, set(), 5) == hybrid_search(hp_index, q, 5)


def test_nagini_frontier_brings_in_destroyer(hp_index):
    hits = frontier_conditioned_search(hp_index, "Who destroys the final Horcrux?", {"nagini"}, 3)
    assert "hp-neville#0" in [h.chunk_id for h in hits]


def test_excluded_hits_replaced_by_next_ranked(hp_index):
    q, frontier = "Who destroys the final Horcrux?", {"nagini"}
    full = [h.chunk_id for h in hybrid_search(hp_index, expand_query(q, frontier), 12)]
    excluded = set(full[:3])
    got = [h.chunk_id for h in frontier_conditioned_search(hp_index, q, frontier, 3, exclude=excluded)]
    assert got == full[3:6]


@given(st.integers(0, 1000), st.integers(1, 8), st.integers(0, 6))
def test_conditioning_monotone_recall(seed, k, n_excl):
    rng = random.Random(seed)
    texts = random_corpus(rng, 30)
    idx = index_of(texts)
    frontier = set(rng.sample(VOCAB, 2))
    excluded = set(rng.sample(sorted(texts), min(n_excl, len(texts))))
    full = [h.chunk_id for h in hybrid_search(idx, expand_query("which horcrux", frontier), len(texts))]
    got = frontier_conditioned_search(idx, "which horcrux", frontier, k, exclude=excluded)
    for h in got:
        assert h.chunk_id not in excluded
        assert full.index(h.chunk_id) < k + len(excluded)


# -- persistence --------------------------------------------------------------------


def test_save_load_round_trip(tmp_path, hp_index):
    p = tmp_path / "hp.idx"
    save_index(hp_index, p)
    assert p.read_bytes().startswith(MAGIC)
    back = load_index(p)
    assert back.N == hp_index.N
    assert back.lexical.postings == hp_index.lexical.postings
    assert np.array_equal(back.vector.matrix, hp_index.vector.matrix)
    for q in ("Who destroys Nagini?", "horcrux diary"):
        assert hybrid_search(back, q, 5) == hybrid_search(hp_index, q, 5)


def test_bad_magic_rejected(tmp_path):
    p = tmp_path / "x.idx"
    p.write_bytes(b"NOT-AN-INDEX" + b"\x00" * 40)
    with pytest.raises(IndexFormatError, match="version"):
        load_index(p)


def test_unknown_version_rejected(tmp_path, hp_index):
    p = tmp_path / "x.idx"
    save_index(hp_index, p)
    data = bytearray(p.read_bytes())
    data[len(MAGIC) : len(MAGIC) + 2] = (99).to_bytes(2, "big")
    p.write_bytes(bytes(data))
    with pytest.raises(IndexFormatError, match="99"):
        load_index(p)
