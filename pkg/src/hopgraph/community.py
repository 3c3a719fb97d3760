"""Leiden community detection (modularity objective) and cached community summaries."""

from __future__ import annotations

import logging
import math
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .errors import ProviderError
from .graph import KnowledgeGraph
from .llm import PromptRequest, render_template

__all__ = ["Community", "leiden", "detect_communities", "summarize_community", "modularity"]

log = logging.getLogger(__name__)


@dataclass
class Community:
    id: int
    members: set[str]
    summary: str = ""
    summarized_members: frozenset[str] | None = field(default=None, repr=False)


class _WGraph:
    """Undirected weighted graph on 0..n-1 with self-loop weights kept apart."""

    def __init__(self, n: int) -> None:
        self.n = n
        self.adj: list[dict[int, float]] = [dict() for _ in range(n)]
        self.loop = [0.0] * n

    def add(self, u: int, v: int, w: float) -> None:
        if u == v:
            self.loop[u] += w
        else:
            self.adj[u][v] = self.adj[u].get(v, 0.0) + w
            self.adj[v][u] = self.adj[v].get(u, 0.0) + w

    def degree(self, u: int) -> float:
        return sum(self.adj[u].values()) + 2.0 * self.loop[u]

    def total_weight(self) -> float:
        return sum(self.degree(u) for u in range(self.n)) / 2.0


def modularity(
    edges: Sequence[tuple[int, int, float]], n: int, membership: Sequence[int], resolution: float = 1.0
) -> float:
    g = _WGraph(n)
    for u, v, w in edges:
        g.add(u, v, w)
    m = g.total_weight()
    if m == 0:
        return 0.0
    internal: dict[int, float] = {}
    tot: dict[int, float] = {}
    for u in range(n):
        c = membership[u]
        tot[c] = tot.get(c, 0.0) + g.degree(u)
        internal[c] = internal.get(c, 0.0) + g.loop[u]
        for v, w in g.adj[u].items():
            if u < v and membership[v] == c:
                internal[c] = internal.get(c, 0.0) + w
    return sum(internal.get(c, 0.0) / m - resolution * (tot[c] / (2 * m)) ** 2 for c in tot)


class _Leiden:
    def __init__(self, resolution: float, theta: float, rng: random.Random) -> None:
        self.gamma = resolution
        self.theta = theta
        self.rng = rng

    def _move_nodes_fast(self, g: _WGraph, comm: list[int], m2: float) -> bool:
        deg = [g.degree(u) for u in range(g.n)]
        tot: dict[int, float] = {}
        for u in range(g.n):
            tot[comm[u]] = tot.get(comm[u], 0.0) + deg[u]
        order = list(range(g.n))
        self.rng.shuffle(order)
        queue = deque(order)
        queued = set(order)
        used = set(comm)
        free_id = max(used) + 1 if used else 0
        moved = False
        while queue:
            u = queue.popleft()
            queued.discard(u)
            cu = comm[u]
            links: dict[int, float] = {}
            for v, w in g.adj[u].items():
                links[comm[v]] = links.get(comm[v], 0.0) + w
            tot[cu] -= deg[u]
            best_c = cu
            best_gain = links.get(cu, 0.0) - self.gamma * deg[u] * tot[cu] / m2
            for c in sorted(links):
                gain = links[c] - self.gamma * deg[u] * tot.get(c, 0.0) / m2
                if gain > best_gain + 1e-12:
                    best_c, best_gain = c, gain
            if best_gain < -1e-12 and tot[cu] > 0:
                best_c, best_gain = free_id, 0.0
                free_id += 1
            tot[best_c] = tot.get(best_c, 0.0) + deg[u]
            if best_c != cu:
                comm[u] = best_c
                moved = True
                for v in g.adj[u]:
                    if comm[v] != best_c and v not in queued:
                        queue.append(v)
                        queued.add(v)
        return moved

    def _refine(self, g: _WGraph, comm: list[int], m2: float) -> list[int]:
        deg = [g.degree(u) for u in range(g.n)]
        ref = list(range(g.n))
        ref_tot = deg[:]
        members: dict[int, list[int]] = {}
        for u in range(g.n):
            members.setdefault(comm[u], []).append(u)

        for c in sorted(members):
            nodes = members[c]
            in_c = set(nodes)
            tot_c = sum(deg[u] for u in nodes)
            order = nodes[:]
            self.rng.shuffle(order)
            for u in order:
                if ref[u] != u or any(ref[x] == u for x in nodes if x != u):
                    continue  # no longer a singleton
                e_uc = sum(w for v, w in g.adj[u].items() if v in in_c)
                if e_uc < self.gamma * deg[u] * (tot_c - deg[u]) / m2:
                    continue  # not well connected to its own community
                links: dict[int, float] = {}
                for v, w in g.adj[u].items():
                    if v in in_c:
                        links[ref[v]] = links.get(ref[v], 0.0) + w
                cands = [(u, 0.0)]
                for r in sorted(links):
                    sub = [x for x in nodes if ref[x] == r]
                    sub_set = set(sub)
                    e_rc = sum(w for x in sub for v, w in g.adj[x].items() if v in in_c and v not in sub_set)
                    if e_rc < self.gamma * ref_tot[r] * (tot_c - ref_tot[r]) / m2:
                        continue
                    gain = links[r] - self.gamma * deg[u] * ref_tot[r] / m2
                    if gain >= 0:
                        cands.append((r, gain / (m2 / 2.0)))
                top = max(g_ for _, g_ in cands)
                weights = [math.exp((g_ - top) / self.theta) for _, g_ in cands]
                r_new = self.rng.choices([r for r, _ in cands], weights=weights)[0]
                if r_new != u:
                    ref[u] = r_new
                    ref_tot[r_new] += deg[u]
                    ref_tot[u] -= deg[u]
        return ref

    @staticmethod
    def _aggregate(g: _WGraph, ref: list[int]) -> tuple[_WGraph, list[int]]:
        ids = {r: i for i, r in enumerate(sorted(set(ref)))}
        agg = _WGraph(len(ids))
        for u in range(g.n):
            a = ids[ref[u]]
            agg.loop[a] += g.loop[u]
            for v, w in g.adj[u].items():
                if u < v:
                    agg.add(a, ids[ref[v]], w)
        return agg, [ids[r] for r in ref]

    def run(self, g: _WGraph) -> list[int]:
        m2 = 2.0 * g.total_weight()
        if m2 == 0:
            return list(range(g.n))
        node_of = list(range(g.n))  # original node -> aggregate node
        comm = list(range(g.n))  # aggregate node -> community
        while True:
            self._move_nodes_fast(g, comm, m2)
            if len(set(comm)) == g.n:
                break
            ref = self._refine(g, comm, m2)
            agg, agg_of = self._aggregate(g, ref)
            if agg.n == g.n:
                break  # refinement merged nothing; aggregation cannot progress
            new_comm = [0] * agg.n
            for u in range(g.n):
                new_comm[agg_of[u]] = comm[u]
            node_of = [agg_of[a] for a in node_of]
            g, comm = agg, new_comm
        return [comm[a] for a in node_of]


def leiden(
    n: int,
    edges: Sequence[tuple[int, int, float]],
    seed: int = 0,
    resolution: float = 1.0,
    theta: float = 0.01,
) -> list[int]:
    """Community label per node (labels are arbitrary ints)."""
    g = _WGraph(n)
    for u, v, w in edges:
        g.add(u, v, w)
    return _Leiden(resolution, theta, random.Random(seed)).run(g)


def _components(names: list[str], pairs) -> list[set[str]]:
    parent = {x: x for x in names}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    groups: dict[str, set[str]] = {}
    for x in names:
        groups.setdefault(find(x), set()).add(x)
    return list(groups.values())


def detect_communities(graph: KnowledgeGraph, seed: int = 0, resolution: float = 1.0) -> list[Community]:
    """Partition the graph's nodes with Leiden; each parallel edge adds weight 1.

    Graphs with fewer than four nodes fall back to connected components.
    Communities are numbered by their smallest member name.
    """
    names = sorted(graph.nodes)
    if not names:
        return []
    pairs = list(graph.undirected_pairs())
    if len(names) < 4:
        groups = _components(names, pairs)
    else:
        idx = {x: i for i, x in enumerate(names)}
        labels = leiden(len(names), [(idx[a], idx[b], 1.0) for a, b in pairs], seed=seed, resolution=resolution)
        by_label: dict[int, set[str]] = {}
        for x, lab in zip(names, labels):
            by_label.setdefault(lab, set()).add(x)
        groups = list(by_label.values())
    groups.sort(key=min)
    return [Community(i, members) for i, members in enumerate(groups)]


def summarize_community(
    community: Community,
    member_support_texts: Sequence[str],
    llm,
    template_dir=None,
    max_chars: int = 4000,
) -> str:
    """Fill ``community.summary`` once per membership.

    Without support texts the summary is the member list and no model call
    is made. A failed call leaves the summary empty.
    """
    key = frozenset(community.members)
    if community.summarized_members == key:
        return community.summary
    if not member_support_texts:
        community.summary = ", ".join(sorted(community.members))
        community.summarized_members = key
        return community.summary
    passages = "\n".join(member_support_texts)[:max_chars]
    prompt = render_template(
        "summarize",
        {"entities": ", ".join(sorted(community.members)), "passages": passages},
        template_dir,
    )
    try:
        text = llm.complete(PromptRequest("summarize", prompt, "summarize")).text.strip()
    except ProviderError as exc:
        log.warning("community %d summary failed: %s", community.id, exc)
        community.summary = ""
        community.summarized_members = None
        return ""
    community.summary = text
    community.summarized_members = key
    return text
