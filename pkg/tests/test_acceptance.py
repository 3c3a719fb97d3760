"""One test per acceptance criterion; each records a PASS/FAIL line shown in the run summary."""

from __future__ import annotations

import os
import random
import time
from contextlib import contextmanager

import pytest

from graph_helpers import graph_of, mention, random_graph, triple
from oracles import brute_modularity, floyd_warshall, naive_bm25, naive_em, naive_f1
from pipeline_helpers import fixture_llm, multi_hop_story_chains, run_fixture
from hopgraph.community import detect_communities
from hopgraph.corpus import Document, chunk_document
from hopgraph.eval import exact_match, token_f1
from hopgraph.fixtures import QUESTION, fixture_config, fixture_engine
from hopgraph.graph import KnowledgeGraph
from hopgraph.index import lexical_search
from test_index import VOCAB, index_of, random_corpus

RESULTS: dict[int, str] = {}


@contextmanager
def criterion(n: int, title: str):
    try:
        yield
    except BaseException:
        RESULTS[n] = f"criterion {n:>2} FAIL  {title}"
        print(RESULTS[n])
        raise
    RESULTS[n] = f"criterion {n:>2} PASS  {title}"
    print(RESULTS[n])


def test_criterion_01_horcrux_end_to_end(tmp_path):
    with criterion(1, "Horcrux question answers Neville with a multi-hop chain in under 5 s"):
        t0 = time.perf_counter()
        rec, _ = run_fixture(trace_path=tmp_path / "trace.jsonl")
        elapsed = time.perf_counter() - t0
        assert rec.final == "Neville"
        assert len(rec.sub_questions) >= 3
        assert multi_hop_story_chains(rec.trace.chains())
        assert elapsed < 5.0


def test_criterion_02_bfs_matches_floyd_warshall():
    with criterion(2, "BFS distances equal Floyd-Warshall on 100 random graphs in under 10 s"):
        t0 = time.perf_counter()
        rng = random.Random(2)
        for _ in range(100):
            nodes, pairs, g = random_graph(rng, 30, 0.2)
            d = floyd_warshall(nodes, pairs)
            for s in nodes:
                want = {v: int(d[s, v]) for v in nodes if d[s, v] < float("inf")}
                assert g.bfs_reachable(s, len(nodes)) == want
        assert time.perf_counter() - t0 < 10.0


def test_criterion_03_bm25_matches_naive_scorer():
    with criterion(3, "BM25 full rankings equal a naive scorer on 25 random corpora"):
        rng = random.Random(3)
        for _ in range(25):
            texts = random_corpus(rng, 50)
            query = " ".join(rng.choices(VOCAB, k=rng.randint(1, 4)))
            got = lexical_search(index_of(texts), query, len(texts))
            want = naive_bm25(texts, query, k1=1.2, b=0.75)
            assert [h.chunk_id for h in got] == [c for c, _ in want]
            assert [h.score for h in got] == pytest.approx([s for _, s in want], rel=1e-12, abs=1e-12)


def test_criterion_04_metrics_match_oracle():
    with criterion(4, "EM and F1 equal a naive implementation on 200 pairs; pinned values hold"):
        words = ["the", "a", "an", "Neville", "Nagini", "last", "Horcrux", "elder", "wand", "of", "death", "sword."]
        rng = random.Random(4)
        for _ in range(200):
            pred = " ".join(rng.choices(words, k=rng.randint(0, 5)))
            golds = [" ".join(rng.choices(words, k=rng.randint(1, 5))) for _ in range(rng.randint(1, 3))]
            em, f1 = exact_match(pred, golds), token_f1(pred, golds)
            assert em == naive_em(pred, golds)
            assert abs(f1 - max(naive_f1(pred, g) for g in golds)) < 1e-9
            assert not em or f1 == 1.0
        assert abs(token_f1("the last Horcrux", "last Horcrux") - 1.0) < 1e-9
        assert abs(token_f1("The Elder Wand", ["elder wand of death"]) - 2 / 3) < 1e-9


def test_criterion_05_chunk_coverage():
    with criterion(5, "chunks of 1..5000-token documents cover every token with a 1100 stride"):
        size, overlap = 1200, 100
        for n in range(1, 5001):
            doc = Document(f"d{n}", " ".join(f"w{i}" for i in range(n)))
            chunks = chunk_document(doc, size, overlap)
            assert chunks[0].token_start == 0 and chunks[-1].token_end == n
            for a, b in zip(chunks, chunks[1:]):
                assert b.token_start == a.token_start + size - overlap
                assert a.token_end == a.token_start + size and b.token_start < a.token_end
            if n in (1, 1200, 1201, 2500, 5000):
                assert chunk_document(doc, size, overlap) == chunks
        doc = Document("d", " ".join(["x"] * 2500))
        assert [(c.token_start, c.token_end) for c in chunk_document(doc, size, overlap)] == [
            (0, 1200), (1100, 2300), (2200, 2500),
        ]


def _random_upserts(rng: random.Random):
    names = ["harry", "ron", "nagini", "neville", "diary", "cup"]
    batch = []
    for _ in range(rng.randint(1, 10)):
        c = rng.choice(["a#0", "b#0", "c#0", "d#0"])
        h, t = rng.sample(names, 2)
        ms = [mention(h, c), mention(t, c)]
        if rng.random() < 0.3:
            ms[0].attributes["aliases"] = rng.choice(["the snake", "Mr X"])
        batch.append((ms, [triple(h, rng.choice(["destroys", "owns"]), t, c, rng.choice([0.3, 0.9]))]))
    return batch


def _view(g: KnowledgeGraph):
    return (
        {n: (frozenset(v.aliases), frozenset(v.support_chunk_ids)) for n, v in g.nodes.items()},
        {k: frozenset(e.support_chunk_ids) for k, e in g.edges.items()},
        set(g.staged),
    )


def test_criterion_06_upsert_laws():
    with criterion(6, "upsert is idempotent and order-insensitive; staged edges promote at support 2"):
        rng = random.Random(6)
        for _ in range(50):
            batch = _random_upserts(rng)
            for support in (1, 2):
                g1 = KnowledgeGraph(support)
                for ms, tr in batch:
                    g1.upsert(ms, tr)
                before = g1.to_dict()
                for ms, tr in batch:
                    assert g1.upsert(ms, tr).as_tuple() == (0, 0, 0, 0, 0, 0)
                assert g1.to_dict() == before
                shuffled = batch[:]
                rng.shuffle(shuffled)
                g2 = KnowledgeGraph(support)
                for ms, tr in shuffled:
                    g2.upsert(ms, tr)
                assert _view(g1) == _view(g2)

        g = KnowledgeGraph(min_edge_support=2)
        key = ("neville", "destroys", "nagini")
        first = g.upsert([mention("neville", "a#0"), mention("nagini", "a#0")], [triple(*key, "a#0")])
        assert (first.new_edges, first.staged_edges) == (0, 1) and key not in g.edges
        second = g.upsert([mention("neville", "b#0"), mention("nagini", "b#0")], [triple(*key, "b#0")])
        assert second.new_edges == 1 and g.edges[key].support_chunk_ids == {"a#0", "b#0"} and not g.staged


def test_criterion_07_community_partition():
    with criterion(7, "communities partition V; two triangles give the modularity-optimal 2 groups"):
        rng = random.Random(7)
        for seed in range(100):
            nodes, _, g = random_graph(rng, 30, 0.2)
            members = [c.members for c in detect_communities(g, seed=seed)]
            assert set().union(*members) == set(nodes)
            assert sum(len(m) for m in members) == len(nodes)
        edges = [("a", "r", "b"), ("b", "r", "c"), ("a", "r", "c"), ("x", "r", "y"), ("y", "r", "z"), ("x", "r", "z")]
        got = {frozenset(c.members) for c in detect_communities(graph_of("abcxyz", edges))}
        want, _ = brute_modularity(list("abcxyz"), [(h, t) for h, _, t in edges])
        assert got == want and len(got) == 2


PARTIALS = ["Voldemort creates each Horcrux.", "Nagini is the final Horcrux.", "Neville"]


def _with_failing(role: str):
    llm, provider = fixture_llm(fail_roles={role})
    cfg = fixture_config(extractor="llm") if role == "extract" else fixture_config()
    return fixture_engine(cfg, llm).answer(QUESTION), provider


def test_criterion_08_fallback_totality():
    with criterion(8, "each failing provider role falls back and the run still returns a record"):
        rec, _ = _with_failing("decompose")
        assert [s.text for s in rec.sub_questions] == [QUESTION]

        rec, _ = _with_failing("extract")
        assert len(rec.graph.nodes) == 0 and list(rec.trace.of("extraction_error"))
        assert all(p.evidence.chains == [] for p in rec.partial_answers)

        rec, _ = _with_failing("subanswer")
        assert [p.answer_text for p in rec.partial_answers] == ["", "", ""]
        assert all(p.error for p in rec.partial_answers)

        rec, _ = _with_failing("merge")
        assert rec.merged == "\n".join(PARTIALS) and rec.final == "Neville"

        rec, _ = _with_failing("finalize")
        assert rec.final == rec.merged and "Neville destroys Nagini" in rec.final

        rec, _ = _with_failing("summarize")
        assert rec.community_summaries_used == [] and rec.final == "Neville"


def test_criterion_09_determinism():
    with criterion(9, "two mock runs give identical final answers and chain sets"):
        a, _ = run_fixture()
        b, _ = run_fixture()
        assert a.final.encode() == b.final.encode()
        assert set(a.trace.chains()) == set(b.trace.chains())
        assert a.trace.chains() == b.trace.chains()


@pytest.mark.skipif(not os.environ.get("HOPGRAPH_LIVE_DATASET"), reason="live provider not configured")
def test_criterion_10_live_smoke(tmp_path):
    """Set HOPGRAPH_LIVE_CONFIG, HOPGRAPH_LIVE_DATASET and HOPGRAPH_LIVE_CORPUS to run."""
    from hopgraph.eval import load_dataset, read_report, run_benchmark
    from hopgraph.pipeline import PipelineConfig, QAEngine
    from hopgraph.trace import Trace

    with criterion(10, "live provider completes 25 questions with evidence chains"):
        cfg = PipelineConfig.load(os.environ["HOPGRAPH_LIVE_CONFIG"])
        engine = QAEngine.from_path(os.environ["HOPGRAPH_LIVE_CORPUS"], cfg)
        data = load_dataset(os.environ["HOPGRAPH_LIVE_DATASET"], limit=25)
        out = tmp_path / "report.jsonl"
        run_benchmark(data, engine, out_path=out, trace_dir=tmp_path / "traces")
        records, agg = read_report(out)
        assert agg is not None and agg["n"] == len(data)
        for r in records:
            if r["error"] is None:
                events = Trace.read(tmp_path / "traces" / f"{r['qid']}.jsonl")
                assert any(e.get("chains") for e in events if e["event"] == "subquestion")
