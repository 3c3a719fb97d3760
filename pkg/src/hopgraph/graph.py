"""The run's knowledge graph: upserts, BFS reachability, evidence-path enumeration."""

from __future__ import annotations

import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Sequence

from .errors import NotFoundError, ValidationError
from .extraction import EntityMention, RelationTriple

__all__ = [
    "Node",
    "Edge",
    "PathEdge",
    "EvidencePath",
    "UpsertReport",
    "KnowledgeGraph",
    "FORWARD",
    "BACKWARD",
]

log = logging.getLogger(__name__)

FORWARD = "forward"
BACKWARD = "backward"


@dataclass
class Node:
    canonical: str
    aliases: set[str] = field(default_factory=set)
    attributes: dict[str, str] = field(default_factory=dict)
    support_chunk_ids: set[str] = field(default_factory=set)
    first_seen_subquestion: int = 0

    def label_text(self) -> str:
        return " ".join([self.canonical, *sorted(self.aliases)])


@dataclass
class Edge:
    head: str
    relation_label: str
    tail: str
    support_chunk_ids: set[str] = field(default_factory=set)
    confidence: float = 0.0

    @property
    def key(self) -> tuple[str, str, str]:
        return (self.head, self.relation_label, self.tail)


@dataclass(frozen=True)
class PathEdge:
    relation_label: str
    direction: str
    support_chunk_ids: frozenset[str]


@dataclass(frozen=True)
class EvidencePath:
    nodes: tuple[str, ...]
    edges: tuple[PathEdge, ...]

    @property
    def length(self) -> int:
        return len(self.edges)

    def sort_key(self) -> tuple:
        return (self.length, self.nodes, tuple((e.relation_label, e.direction) for e in self.edges))


@dataclass
class UpsertReport:
    new_nodes: int = 0
    merged_nodes: int = 0
    new_edges: int = 0
    merged_edges: int = 0
    staged_edges: int = 0
    failures: int = 0

    def __add__(self, other: "UpsertReport") -> "UpsertReport":
        return UpsertReport(*(a + b for a, b in zip(self.as_tuple(), other.as_tuple())))

    def as_tuple(self) -> tuple[int, ...]:
        return (
            self.new_nodes,
            self.merged_nodes,
            self.new_edges,
            self.merged_edges,
            self.staged_edges,
            self.failures,
        )

    def to_dict(self) -> dict[str, int]:
        return dict(zip(
            ("new_nodes", "merged_nodes", "new_edges", "merged_edges", "staged_edges", "failures"),
            self.as_tuple(),
        ))


class KnowledgeGraph:
    """G = (V, E) with directed labelled edges and undirected reachability.

    Edges whose distinct supporting chunks number fewer than
    ``min_edge_support`` are held in a staging area and are invisible to
    traversal until enough support accrues. Admission is monotone.
    """

    def __init__(self, min_edge_support: int = 1) -> None:
        if min_edge_support < 1:
            raise ValidationError("min_edge_support must be >= 1")
        self.min_edge_support = min_edge_support
        self.nodes: dict[str, Node] = {}
        self.edges: dict[tuple[str, str, str], Edge] = {}
        self.staged: dict[tuple[str, str, str], Edge] = {}
        self._out: dict[str, list[tuple[str, str, str]]] = {}
        self._in: dict[str, list[tuple[str, str, str]]] = {}

    def __len__(self) -> int:
        return len(self.nodes)

    def __contains__(self, name: object) -> bool:
        return name in self.nodes

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, KnowledgeGraph):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    # -- mutation ------------------------------------------------------------

    def upsert(
        self,
        mentions: Sequence[EntityMention],
        triples: Sequence[RelationTriple],
        subquestion_ordinal: int = 0,
    ) -> UpsertReport:
        known = {m.canonical for m in mentions}
        for t in triples:
            for end in (t.head_canonical, t.tail_canonical):
                if end not in known:
                    raise ValidationError(f"triple {t} references {end!r}, absent from the mentions")

        rep = UpsertReport()
        for m in mentions:
            node = self.nodes.get(m.canonical)
            support = {m.chunk_id} if m.chunk_id else set()
            attrs = {k: v for k, v in m.attributes.items() if k != "aliases"}
            if node is None:
                self.nodes[m.canonical] = Node(
                    m.canonical, m.aliases(), attrs, support, subquestion_ordinal
                )
                self._out[m.canonical] = []
                self._in[m.canonical] = []
                rep.new_nodes += 1
                continue
            changed = False
            new_aliases = m.aliases() - node.aliases
            if new_aliases:
                node.aliases |= new_aliases
                changed = True
            if not support <= node.support_chunk_ids:
                node.support_chunk_ids |= support
                changed = True
            for k, v in attrs.items():
                if k not in node.attributes:
                    node.attributes[k] = v
                    changed = True
                elif node.attributes[k] != v:
                    log.info(
                        "attribute conflict on %r.%s: keeping %r, ignoring %r",
                        m.canonical, k, node.attributes[k], v,
                    )
            if subquestion_ordinal < node.first_seen_subquestion:
                node.first_seen_subquestion = subquestion_ordinal
                changed = True
            rep.merged_nodes += changed

        for t in triples:
            key = (t.head_canonical, t.relation_label, t.tail_canonical)
            if key in self.edges:
                e = self.edges[key]
                if t.support_chunk_id not in e.support_chunk_ids or t.confidence > e.confidence:
                    e.support_chunk_ids.add(t.support_chunk_id)
                    e.confidence = max(e.confidence, t.confidence)
                    rep.merged_edges += 1
                continue
            e = self.staged.get(key)
            if e is None:
                e = Edge(*key, support_chunk_ids=set(), confidence=0.0)
                self.staged[key] = e
            grew = t.support_chunk_id not in e.support_chunk_ids
            e.support_chunk_ids.add(t.support_chunk_id)
            e.confidence = max(e.confidence, t.confidence)
            if len(e.support_chunk_ids) >= self.min_edge_support:
                del self.staged[key]
                self._admit(e)
                rep.new_edges += 1
            elif grew:
                rep.staged_edges += 1
        return rep

    def _admit(self, e: Edge) -> None:
        self.edges[e.key] = e
        self._out[e.head].append(e.key)
        self._in[e.tail].append(e.key)

    # -- queries -------------------------------------------------------------

    def incident(self, name: str) -> list[tuple[str, Edge, str]]:
        """(neighbour, edge, direction) for every admitted edge touching ``name``,
        ordered by neighbour, label, direction."""
        out = [(self.edges[k].tail, self.edges[k], FORWARD) for k in self._out.get(name, ())]
        out += [(self.edges[k].head, self.edges[k], BACKWARD) for k in self._in.get(name, ())]
        out.sort(key=lambda x: (x[0], x[1].relation_label, x[2]))
        return out

    def neighbors(self, name: str) -> list[str]:
        return sorted({nb for nb, _, _ in self.incident(name)})

    def _require(self, name: str) -> None:
        if name not in self.nodes:
            raise NotFoundError(f"entity {name!r} not in graph")

    def bfs_reachable(self, seed: str, h: int) -> dict[str, int]:
        """Nodes within ``h`` undirected hops of ``seed`` mapped to their hop distance."""
        self._require(seed)
        dist = {seed: 0}
        queue = deque([seed])
        while queue:
            u = queue.popleft()
            if dist[u] == h:
                continue
            for v in self.neighbors(u):
                if v not in dist:
                    dist[v] = dist[u] + 1
                    queue.append(v)
        return dist

    def enumerate_paths(
        self,
        seed: str,
        h: int,
        max_paths_per_seed: int | None = None,
        max_branch: int | None = None,
    ) -> list[EvidencePath]:
        """All simple paths of 1..h edges starting at ``seed``.

        Paths are produced shortest first, then in lexicographic node order.
        ``max_branch`` limits how many incident edges are followed out of any
        one node; ``max_paths_per_seed`` truncates the ordered result.
        """
        self._require(seed)
        result: list[EvidencePath] = []
        frontier = [EvidencePath((seed,), ())]
        for _ in range(h):
            nxt = []
            for p in frontier:
                tail = p.nodes[-1]
                options = [x for x in self.incident(tail) if x[0] not in p.nodes]
                if max_branch is not None:
                    options = options[:max_branch]
                for nb, e, direction in options:
                    pe = PathEdge(e.relation_label, direction, frozenset(e.support_chunk_ids))
                    nxt.append(EvidencePath(p.nodes + (nb,), p.edges + (pe,)))
            if not nxt:
                break
            nxt.sort(key=EvidencePath.sort_key)
            if max_paths_per_seed is not None and len(result) + len(nxt) >= max_paths_per_seed:
                result.extend(nxt[: max_paths_per_seed - len(result)])
                return result
            result.extend(nxt)
            frontier = nxt
        return result

    def validate(self) -> None:
        """Walk every structure and raise if they disagree."""
        for key, e in self.edges.items():
            if e.key != key:
                raise ValidationError(f"edge stored under wrong key {key}")
            for end in (e.head, e.tail):
                if end not in self.nodes:
                    raise ValidationError(f"edge {key} has dangling endpoint {end!r}")
            if key not in self._out[e.head] or key not in self._in[e.tail]:
                raise ValidationError(f"edge {key} missing from adjacency")
        for name in self.nodes:
            for k in self._out[name]:
                if k not in self.edges or k[0] != name:
                    raise ValidationError(f"stale out-adjacency {k} on {name!r}")
            for k in self._in[name]:
                if k not in self.edges or k[2] != name:
                    raise ValidationError(f"stale in-adjacency {k} on {name!r}")
        if sum(map(len, self._out.values())) != len(self.edges):
            raise ValidationError("out-adjacency size differs from edge count")
        for n in self.nodes.values():
            if not n.support_chunk_ids:
                raise ValidationError(f"node {n.canonical!r} has no supporting chunk")

    # -- export / import -----------------------------------------------------

    @staticmethod
    def _edge_dict(e: Edge) -> dict[str, Any]:
        return {
            "head": e.head,
            "relation": e.relation_label,
            "tail": e.tail,
            "support_chunk_ids": sorted(e.support_chunk_ids),
            "confidence": e.confidence,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "min_edge_support": self.min_edge_support,
            "nodes": [
                {
                    "canonical": n.canonical,
                    "aliases": sorted(n.aliases),
                    "attributes": dict(sorted(n.attributes.items())),
                    "support_chunk_ids": sorted(n.support_chunk_ids),
                    "first_seen_subquestion": n.first_seen_subquestion,
                }
                for n in sorted(self.nodes.values(), key=lambda n: n.canonical)
            ],
            "edges": [self._edge_dict(self.edges[k]) for k in sorted(self.edges)],
            "staged_edges": [self._edge_dict(self.staged[k]) for k in sorted(self.staged)],
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "KnowledgeGraph":
        g = cls(min_edge_support=data.get("min_edge_support", 1))
        for n in data["nodes"]:
            g.nodes[n["canonical"]] = Node(
                n["canonical"],
                set(n["aliases"]),
                dict(n["attributes"]),
                set(n["support_chunk_ids"]),
                n.get("first_seen_subquestion", 0),
            )
            g._out[n["canonical"]] = []
            g._in[n["canonical"]] = []
        for e in data["edges"]:
            g._admit(Edge(e["head"], e["relation"], e["tail"], set(e["support_chunk_ids"]), e["confidence"]))
        for e in data.get("staged_edges", []):
            edge = Edge(e["head"], e["relation"], e["tail"], set(e["support_chunk_ids"]), e["confidence"])
            g.staged[edge.key] = edge
        g.validate()
        return g

    def to_tsv(self) -> str:
        """Tab-separated export: a record kind then JSON-encoded fields, so
        names containing tabs or newlines survive the round trip."""
        d = self.to_dict()
        rows = [["meta", d["min_edge_support"]]]
        for n in d["nodes"]:
            rows.append(["node", n["canonical"], n["aliases"], n["attributes"],
                         n["support_chunk_ids"], n["first_seen_subquestion"]])
        for kind, key in (("edge", "edges"), ("staged", "staged_edges")):
            for e in d[key]:
                rows.append([kind, e["head"], e["relation"], e["tail"], e["support_chunk_ids"], e["confidence"]])
        return "".join(
            r[0] + "\t" + "\t".join(json.dumps(x, ensure_ascii=False) for x in r[1:]) + "\n" for r in rows
        )

    @classmethod
    def from_tsv(cls, text: str) -> "KnowledgeGraph":
        data: dict[str, Any] = {"min_edge_support": 1, "nodes": [], "edges": [], "staged_edges": []}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line:
                continue
            kind, *raw = line.split("\t")
            try:
                vals = [json.loads(x) for x in raw]
                if kind == "meta":
                    data["min_edge_support"] = vals[0]
                elif kind == "node":
                    keys = ("canonical", "aliases", "attributes", "support_chunk_ids", "first_seen_subquestion")
                    data["nodes"].append(dict(zip(keys, vals, strict=True)))
                elif kind in ("edge", "staged"):
                    keys = ("head", "relation", "tail", "support_chunk_ids", "confidence")
                    data["edges" if kind == "edge" else "staged_edges"].append(dict(zip(keys, vals, strict=True)))
                else:
                    raise ValueError(f"unknown record kind {kind!r}")
            except ValueError as exc:
                raise ValidationError(f"graph TSV line {lineno}: {exc}") from exc
        return cls.from_dict(data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "KnowledgeGraph":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def undirected_pairs(self) -> Iterator[tuple[str, str]]:
        for h, _, t in self.edges:
            yield (h, t) if h < t else (t, h)
