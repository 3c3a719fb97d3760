"""The building blocks on their own: hybrid retrieval, the graph, BFS paths, communities."""

from __future__ import annotations

# %% Index the corpus and compare lexical, dense and fused rankings
from hopgraph.corpus import chunk_corpus, load_corpus
from hopgraph.fixtures import CORPUS
from hopgraph.index import HashingEmbedder, build_index, hybrid_search, lexical_search, vector_search

index = build_index(chunk_corpus(load_corpus(CORPUS), 1200, 100), HashingEmbedder())
query = "Who destroys Nagini?"
for name, hits in (
    ("bm25", lexical_search(index, query, 3)),
    ("dense", vector_search(index, query, 3)),
    ("fused", hybrid_search(index, query, 3)),
):
    print(f"{name:>6}:", [(h.chunk_id, round(h.score, 4)) for h in hits])

# %% Extract every chunk with the rule extractor and upsert into one graph
from hopgraph.extraction import RuleExtractor
from hopgraph.graph import KnowledgeGraph

graph = KnowledgeGraph()
extractor = RuleExtractor()
for chunk in index.chunks.values():
    mentions, triples = extractor.extract(chunk)
    graph.upsert(mentions, triples)
print(f"{len(graph.nodes)} nodes, {len(graph.edges)} edges")

# %% Distances ignore edge direction; paths keep it in their rendering
from hopgraph.bfs_rf import describe_path

print(graph.bfs_reachable("voldemort", 2).get("nagini"))
for path in graph.enumerate_paths("neville", 2, max_paths_per_seed=5):
    print(describe_path(path))

# %% Communities over the full graph
from hopgraph.community import detect_communities

for c in detect_communities(graph):
    if len(c.members) > 1:
        print(c.id, sorted(c.members)[:8])
