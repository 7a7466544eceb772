"""The three-layer sentence logic graph: storage, validation and persistence."""

from __future__ import annotations

import enum
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from .relations import parse_label

__all__ = [
    "FORMAT_VERSION",
    "DuplicateNode",
    "EdgeKind",
    "FrozenGraph",
    "GraphEdge",
    "GraphError",
    "GraphNode",
    "Layer",
    "LayerViolation",
    "MissingEndpoint",
    "RelationFamilyMismatch",
    "SentenceGraph",
    "UnknownNode",
    "VersionMismatch",
    "Violation",
    "load",
    "parse_node_id",
    "save",
    "sentence_node_id",
    "topic_node_id",
]

FORMAT_VERSION = "1"


class GraphError(Exception):
    pass


class DuplicateNode(GraphError):
    pass


class FrozenGraph(GraphError):
    pass


class MissingEndpoint(GraphError):
    pass


class UnknownNode(GraphError, KeyError):
    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown node"


class LayerViolation(GraphError):
    pass


class RelationFamilyMismatch(GraphError):
    pass


class VersionMismatch(GraphError):
    pass


class Layer(str, enum.Enum):
    TOPIC = "topic"
    CORE = "core"
    SUPPLEMENTARY = "supplementary"

    @property
    def is_sentence(self) -> bool:
        return self is not Layer.TOPIC


class EdgeKind(str, enum.Enum):
    TT = "tt"
    TC = "tc"
    CC = "cc"
    CS = "cs"


def topic_node_id(doc_id: str) -> str:
    return f"t:{doc_id}"


def sentence_node_id(doc_id: str, index: int) -> str:
    return f"s:{doc_id}:{index}"


def parse_node_id(node_id: str) -> tuple[str, str, int | None]:
    """Split a node id into ``(prefix, doc_id, sent_index)``."""
    if node_id.startswith("t:") and len(node_id) > 2:
        return "t", node_id[2:], None
    if node_id.startswith("s:"):
        doc_id, sep, idx = node_id[2:].rpartition(":")
        if sep and doc_id and idx.isdigit():
            return "s", doc_id, int(idx)
    raise ValueError(f"malformed node id {node_id!r}")


@dataclass(frozen=True)
class GraphNode:
    id: str
    layer: Layer
    doc_id: str
    text: str
    sent_index: int | None = None
    entities: tuple[str, ...] = ()
    title: str | None = None

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"node {self.id}: empty text")
        if (self.layer is Layer.TOPIC) != (self.sent_index is None):
            raise ValueError(f"node {self.id}: sent_index must be absent exactly on topic nodes")
        if self.layer is not Layer.TOPIC and (self.entities or self.title):
            raise ValueError(f"node {self.id}: only topic nodes carry entities or a title")

    def to_record(self) -> dict:
        rec = {"id": self.id, "layer": self.layer.value, "doc_id": self.doc_id, "text": self.text}
        if self.sent_index is not None:
            rec["sent_index"] = self.sent_index
        if self.layer is Layer.TOPIC:
            rec["entities"] = list(self.entities)
            if self.title:
                rec["title"] = self.title
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> GraphNode:
        return cls(
            id=rec["id"],
            layer=Layer(rec["layer"]),
            doc_id=rec["doc_id"],
            text=rec["text"],
            sent_index=rec.get("sent_index"),
            entities=tuple(rec.get("entities", ())),
            title=rec.get("title"),
        )

    @property
    def search_text(self) -> str:
        """Text used for query scoring; topics add their entities."""
        if self.layer is Layer.TOPIC and self.entities:
            return f"{self.text} {' '.join(self.entities)}"
        return self.text


@dataclass(frozen=True)
class GraphEdge:
    src: str
    dst: str
    kind: EdgeKind
    relation: str | None = None
    symmetric: bool = False

    @classmethod
    def make(cls, src: str, dst: str, kind: EdgeKind | str, relation=None) -> GraphEdge:
        """Build an edge with its canonical relation string and symmetry flag."""
        kind = EdgeKind(kind)
        if isinstance(relation, enum.Enum):
            relation = relation.value
        symmetric = kind is EdgeKind.TT
        if kind is EdgeKind.CC and relation is not None:
            label = parse_label(relation, "NN")
            symmetric = label is not None and label.symmetric
        return cls(src, dst, kind, relation, symmetric)

    def to_record(self) -> dict:
        rec = {"src": self.src, "dst": self.dst, "kind": self.kind.value, "symmetric": self.symmetric}
        if self.relation is not None:
            rec["relation"] = self.relation
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> GraphEdge:
        return cls(rec["src"], rec["dst"], EdgeKind(rec["kind"]), rec.get("relation"), bool(rec["symmetric"]))

    def sort_key(self) -> tuple:
        return (self.kind.value, self.src, self.dst, self.relation or "")

    def other(self, node_id: str) -> str:
        return self.dst if node_id == self.src else self.src


@dataclass(frozen=True)
class Violation:
    rule: str
    message: str

    def __str__(self) -> str:
        return f"[{self.rule}] {self.message}"


_EDGE_LAYERS = {
    EdgeKind.TT: (Layer.TOPIC, Layer.TOPIC),
    EdgeKind.TC: (Layer.TOPIC, Layer.CORE),
    EdgeKind.CC: (Layer.CORE, Layer.CORE),
    EdgeKind.CS: (Layer.CORE, Layer.SUPPLEMENTARY),
}


def _edge_problem(edge: GraphEdge, src: GraphNode, dst: GraphNode) -> GraphError | None:
    if edge.src == edge.dst:
        return LayerViolation(f"self-loop on {edge.src}")
    want_src, want_dst = _EDGE_LAYERS[edge.kind]
    if src.layer is not want_src or dst.layer is not want_dst:
        return LayerViolation(
            f"{edge.kind.value} edge {edge.src} -> {edge.dst} joins "
            f"{src.layer.value} -> {dst.layer.value}, expected {want_src.value} -> {want_dst.value}"
        )
    if edge.kind is EdgeKind.TT:
        if src.doc_id == dst.doc_id:
            return LayerViolation(f"tt edge {edge.src} -> {edge.dst} stays inside document {src.doc_id}")
    elif src.doc_id != dst.doc_id:
        return LayerViolation(
            f"{edge.kind.value} edge {edge.src} -> {edge.dst} crosses documents {src.doc_id} / {dst.doc_id}"
        )

    rel = edge.relation
    if edge.kind is EdgeKind.TC:
        if rel is not None:
            return RelationFamilyMismatch(f"tc edge {edge.src} -> {edge.dst} must not carry a relation")
    elif edge.kind is EdgeKind.TT:
        if not rel:
            return RelationFamilyMismatch(f"tt edge {edge.src} -> {edge.dst} needs a bridge description")
    else:
        family = "NN" if edge.kind is EdgeKind.CC else "NS"
        label = parse_label(rel or "", family)
        if label is None or label.value != rel:
            return RelationFamilyMismatch(
                f"{edge.kind.value} edge {edge.src} -> {edge.dst} has relation {rel!r}, "
                f"expected a canonical {family} label"
            )
    if edge.symmetric != GraphEdge.make(edge.src, edge.dst, edge.kind, rel).symmetric:
        return RelationFamilyMismatch(f"edge {edge.src} -> {edge.dst} has the wrong symmetry flag")
    return None


@dataclass
class SentenceGraph:
    """Node/edge store with a per-node incidence index.

    Mutable until :meth:`freeze`; freezing puts edges into canonical
    ``(kind, src, dst)`` order so a freshly built graph and one loaded
    from disk traverse identically.
    """

    meta: dict = field(default_factory=dict)
    nodes: dict[str, GraphNode] = field(default_factory=dict)
    edges: list[GraphEdge] = field(default_factory=list)
    frozen: bool = False
    _adj: dict[str, list[int]] = field(default_factory=dict, repr=False, compare=False)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SentenceGraph):
            return NotImplemented
        return (
            self.meta == other.meta
            and self.nodes == other.nodes
            and sorted(self.edges, key=GraphEdge.sort_key) == sorted(other.edges, key=GraphEdge.sort_key)
        )

    def _check_mutable(self):
        if self.frozen:
            raise FrozenGraph("graph is frozen")

    def add_node(self, node: GraphNode) -> SentenceGraph:
        self._check_mutable()
        if node.id in self.nodes:
            raise DuplicateNode(f"node {node.id} already present")
        self.nodes[node.id] = node
        self._adj[node.id] = []
        return self

    def add_edge(self, edge: GraphEdge) -> SentenceGraph:
        self._check_mutable()
        for end in (edge.src, edge.dst):
            if end not in self.nodes:
                raise MissingEndpoint(f"edge endpoint {end} not in graph")
        problem = _edge_problem(edge, self.nodes[edge.src], self.nodes[edge.dst])
        if problem is not None:
            raise problem
        self.edges.append(edge)
        pos = len(self.edges) - 1
        self._adj[edge.src].append(pos)
        if edge.dst != edge.src:
            self._adj[edge.dst].append(pos)
        return self

    def _reindex(self):
        self._adj = {nid: [] for nid in self.nodes}
        for pos, edge in enumerate(self.edges):
            self._adj[edge.src].append(pos)
            self._adj[edge.dst].append(pos)

    def freeze(self) -> SentenceGraph:
        if not self.frozen:
            self.edges.sort(key=GraphEdge.sort_key)
            self._reindex()
            self.frozen = True
        return self

    def node(self, node_id: str) -> GraphNode:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise UnknownNode(f"unknown node {node_id}") from None

    def neighbors(self, node_id: str, kinds: Iterable[EdgeKind | str] | None = None) -> list[tuple[str, GraphEdge]]:
        """Incident edges in edge order, traversable from either endpoint."""
        if node_id not in self.nodes:
            raise UnknownNode(f"unknown node {node_id}")
        wanted = None if kinds is None else {EdgeKind(k) for k in kinds}
        out = []
        for pos in self._adj[node_id]:
            edge = self.edges[pos]
            if wanted is None or edge.kind in wanted:
                out.append((edge.other(node_id), edge))
        return out

    def nodes_in(self, *layers: Layer) -> list[GraphNode]:
        return [n for n in self.nodes.values() if n.layer in layers]

    def children(self, topic_id: str) -> list[str]:
        """Core sentences attached to a topic by tc edges."""
        return [e.dst for _, e in self.neighbors(topic_id, [EdgeKind.TC]) if e.src == topic_id]

    def stats(self) -> dict:
        layers = Counter(n.layer.value for n in self.nodes.values())
        kinds = Counter(e.kind.value for e in self.edges)
        return {
            "nodes": {layer.value: layers.get(layer.value, 0) for layer in Layer},
            "edges": {kind.value: kinds.get(kind.value, 0) for kind in EdgeKind},
            "total_nodes": len(self.nodes),
            "total_edges": len(self.edges),
        }

    def validate(self) -> list[Violation]:
        """Every structural rule broken by the graph; empty when well formed."""
        report: list[Violation] = []
        topics_per_doc = Counter(n.doc_id for n in self.nodes.values() if n.layer is Layer.TOPIC)
        for doc_id, count in sorted(topics_per_doc.items()):
            if count != 1:
                report.append(Violation("one-topic-per-doc", f"document {doc_id} has {count} topic nodes"))
        for doc_id in sorted({n.doc_id for n in self.nodes.values()} - set(topics_per_doc)):
            report.append(Violation("one-topic-per-doc", f"document {doc_id} has no topic node"))

        tc_parents: Counter = Counter()
        cs_parents: Counter = Counter()
        for edge in self.edges:
            if edge.src not in self.nodes or edge.dst not in self.nodes:
                report.append(Violation("endpoint", f"edge {edge.src} -> {edge.dst} has a missing endpoint"))
                continue
            problem = _edge_problem(edge, self.nodes[edge.src], self.nodes[edge.dst])
            if problem is not None:
                report.append(Violation("edge-rule", str(problem)))
            if edge.kind is EdgeKind.TC:
                tc_parents[edge.dst] += 1
            elif edge.kind is EdgeKind.CS:
                cs_parents[edge.dst] += 1

        for node in sorted(self.nodes.values(), key=lambda n: n.id):
            if node.layer is Layer.CORE and tc_parents[node.id] != 1:
                report.append(
                    Violation("core-parent", f"core node {node.id} has {tc_parents[node.id]} incoming tc edges")
                )
            elif node.layer is Layer.SUPPLEMENTARY and cs_parents[node.id] != 1:
                report.append(
                    Violation(
                        "supplementary-parent",
                        f"supplementary node {node.id} has {cs_parents[node.id]} incoming cs edges",
                    )
                )
        return report

    def to_dict(self) -> dict:
        return {
            "version": FORMAT_VERSION,
            "meta": self.meta,
            "nodes": [self.nodes[k].to_record() for k in sorted(self.nodes)],
            "edges": [e.to_record() for e in sorted(self.edges, key=GraphEdge.sort_key)],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, ensure_ascii=False, indent=1) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> SentenceGraph:
        version = str(data.get("version"))
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"graph format version {version!r}, this build reads {FORMAT_VERSION!r}")
        graph = cls(meta=dict(data.get("meta", {})))
        for rec in data["nodes"]:
            graph.add_node(GraphNode.from_record(rec))
        for rec in data["edges"]:
            graph.add_edge(GraphEdge.from_record(rec))
        return graph.freeze()


def save(graph: SentenceGraph, path: str | Path) -> None:
    Path(path).write_text(graph.to_json(), encoding="utf-8")


def load(path: str | Path) -> SentenceGraph:
    return SentenceGraph.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
