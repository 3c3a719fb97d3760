from __future__ import annotations

import random

from hopgraph.extraction import EntityMention, RelationTriple
from hopgraph.graph import KnowledgeGraph


def mention(name: str, chunk: str = "c#0", **attrs) -> EntityMention:
    return EntityMention(name, name, dict(attrs), chunk)


def triple(h: str, r: str, t: str, chunk: str = "c#0", conf: float = 0.9) -> RelationTriple:
    return RelationTriple(h, r, t, chunk, conf)


def graph_of(nodes, edges, min_edge_support: int = 1) -> KnowledgeGraph:
    """Graph from node names and (head, label, tail) edges, one chunk per edge."""
    g = KnowledgeGraph(min_edge_support)
    g.upsert([mention(n) for n in nodes], [])
    for i, (h, r, t) in enumerate(edges):
        g.upsert([mention(h, f"e#{i}"), mention(t, f"e#{i}")], [triple(h, r, t, f"e#{i}")])
    return g


def random_graph(rng: random.Random, max_nodes: int = 30, p: float = 0.2):
    n = rng.randint(1, max_nodes)
    nodes = [f"n{i:02d}" for i in range(n)]
    pairs = [(a, b) for i, a in enumerate(nodes) for b in nodes[i + 1 :] if rng.random() < p]
    edges = [(a, "rel", b) if rng.random() < 0.5 else (b, "rel", a) for a, b in pairs]
    return nodes, pairs, graph_of(nodes, edges)
