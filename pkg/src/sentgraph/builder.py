"""Offline graph construction: per-document logic modeling, then topic bridging."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from typing import Callable, Mapping, Sequence

from . import templates
from .corpus import Document, Sentence, segment_sentences
from .graph import (
    EdgeKind,
    GraphEdge,
    GraphError,
    GraphNode,
    Layer,
    SentenceGraph,
    sentence_node_id,
    topic_node_id,
)
from .llm import ChatClient, ProviderError
from .relations import (
    NSRelation,
    RelationAssertion,
    RelationKind,
    WholeResponseUnparseable,
    parse_core_indices,
    parse_relation_response,
    render_nn_prompt,
    render_ns_prompt,
)
from .retrieval import lexical_cosine

__all__ = [
    "BuildConfig",
    "BuildError",
    "DocumentStructure",
    "assign_satellites",
    "bridge_topics",
    "build_graph",
    "build_topic",
    "identify_core_sentences",
    "link_satellites",
    "structure_document",
]

log = logging.getLogger(__name__)


class BuildError(GraphError):
    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("built graph failed validation: " + "; ".join(map(str, self.violations[:5])))


@dataclass(frozen=True)
class BuildConfig:
    alpha: float = 0.7
    tau_bridge: float = 0.5
    max_core_fraction: float = 0.5
    llm_concurrency: int = 4
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if not 0.0 <= self.tau_bridge <= 1.0:
            raise ValueError("tau_bridge must lie in [0, 1]")
        if not 0.0 < self.max_core_fraction <= 1.0:
            raise ValueError("max_core_fraction must lie in (0, 1]")
        if self.llm_concurrency < 1:
            raise ValueError("llm_concurrency must be at least 1")

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


def _ask(llm: ChatClient, prompt: str, parse: Callable[[str], object]):
    """Ask, and on an unreadable reply ask once more with a format reminder.

    Returns ``None`` when both attempts fail.
    """
    for attempt in range(2):
        text = prompt if attempt == 0 else prompt + "\n" + templates.format_reminder()
        try:
            return parse(llm.chat(text).text)
        except (WholeResponseUnparseable, ProviderError) as exc:
            log.debug("attempt %d unusable: %s", attempt + 1, exc)
    return None


def _paragraph_leads(sentences: Sequence[Sentence]) -> list[int]:
    leads, seen = [], set()
    for s in sentences:
        if s.paragraph not in seen:
            seen.add(s.paragraph)
            leads.append(s.index)
    return leads


def identify_core_sentences(
    sentences: Sequence[Sentence], llm: ChatClient, max_core_fraction: float = 0.5
) -> tuple[list[int], list[RelationAssertion]]:
    """Core sentence indices (ascending) and the N-N relations among them.

    At most ``ceil(max_core_fraction * n)`` cores are kept, in the order the
    model listed them. If the model never answers usably, the first
    sentence of every paragraph becomes core and no relations are kept.
    """
    if not sentences:
        raise ValueError("no sentences to analyse")
    valid = {s.index for s in sentences}

    def parse(text: str):
        rels = parse_relation_response(text, RelationKind.NN, valid)
        core = parse_core_indices(text, valid)
        if core is None:
            core = list(dict.fromkeys(i for r in rels for i in (r.src_sent, r.dst_sent)))
        if not core:
            raise WholeResponseUnparseable("reply names no core sentence")
        return core, rels

    result = _ask(llm, render_nn_prompt(sentences), parse)
    if result is None:
        log.warning("doc %s: core identification failed, using paragraph leads", sentences[0].doc_id)
        return _paragraph_leads(sentences), []

    core, rels = result
    cap = max(1, math.ceil(max_core_fraction * len(sentences)))
    core_set = set(core[:cap])
    doc_id = sentences[0].doc_id
    kept = [
        RelationAssertion(r.src_sent, r.dst_sent, r.kind, r.label, doc_id)
        for r in rels
        if r.src_sent in core_set and r.dst_sent in core_set
    ]
    return sorted(core_set), kept


def assign_satellites(
    core_indices: Sequence[int],
    all_sentences: Sequence[Sentence] | Sequence[int],
    similarity_fn: Callable[[int, int], float],
    alpha: float,
) -> dict[int, list[int]]:
    """Attach every non-core sentence to its best-scoring core.

    score(s, c) = alpha * sim(s, c) + (1 - alpha) / (1 + |s - c|), ties going
    to the nearer core and then to the lower core index.
    """
    if not core_indices:
        raise ValueError("need at least one core sentence")
    indices = [s.index if isinstance(s, Sentence) else int(s) for s in all_sentences]
    cores = sorted(set(core_indices))
    out: dict[int, list[int]] = {c: [] for c in cores}
    for s in indices:
        if s in out:
            continue
        best = max(
            cores,
            key=lambda c: (alpha * similarity_fn(s, c) + (1.0 - alpha) / (1 + abs(s - c)), -abs(s - c), -c),
        )
        out[best].append(s)
    for sats in out.values():
        sats.sort()
    return out


def link_satellites(
    assignment: Mapping[int, Sequence[int]], sentences: Sequence[Sentence], llm: ChatClient
) -> list[RelationAssertion]:
    """One N-S relation per (core, satellite) pair; unresolved pairs become Elaboration."""
    by_index = {s.index: s for s in sentences}
    doc_id = sentences[0].doc_id if sentences else ""
    out: list[RelationAssertion] = []
    for core in sorted(assignment):
        sats = list(assignment[core])
        if not sats:
            continue
        valid = {core, *sats}
        parsed = _ask(
            llm,
            render_ns_prompt(by_index[core], [by_index[s] for s in sats]),
            lambda text: parse_relation_response(text, RelationKind.NS, valid),
        )
        labels: dict[int, NSRelation] = {}
        for rel in parsed or ():
            if rel.src_sent == core and rel.dst_sent in valid:
                labels.setdefault(rel.dst_sent, rel.label)
            elif rel.dst_sent == core and rel.src_sent in valid:
                labels.setdefault(rel.src_sent, rel.label)
        for s in sats:
            out.append(RelationAssertion(core, s, RelationKind.NS, labels.get(s, NSRelation.Elaboration), doc_id))
    return out


def _parse_entities(text: str) -> list[str]:
    m = re.search(r"```[^\n]*\n(.*?)```", text, re.S)
    body = m.group(1) if m else text
    out: list[str] = []
    for line in body.splitlines():
        for part in line.split(",") if "," in line and not m else [line]:
            ent = part.strip().lstrip("-*•").strip().strip("\"'").lower()
            if ent and ent not in out:
                out.append(ent)
    return out


def build_topic(doc: Document, core_sentences: Sequence[Sentence], llm: ChatClient) -> GraphNode:
    """Topic node: the title (or an LLM summary of the cores) plus extracted entities."""
    listing = "\n".join(f"- {templates.escape(s.text)}" for s in core_sentences)
    fallback = core_sentences[0].text if core_sentences else doc.doc_id
    text = doc.title
    if not text and core_sentences:
        try:
            reply = llm.chat(templates.render("topic_summary", sentences=listing)).text
            text = next((ln.strip() for ln in reply.splitlines() if ln.strip()), "")
        except ProviderError as exc:
            log.warning("doc %s: summary failed (%s)", doc.doc_id, exc)
    entities: list[str] = []
    if core_sentences:
        try:
            entities = _parse_entities(llm.chat(templates.render("topic_entities", sentences=listing)).text)
        except ProviderError as exc:
            log.warning("doc %s: entity extraction failed (%s)", doc.doc_id, exc)
    return GraphNode(
        id=topic_node_id(doc.doc_id),
        layer=Layer.TOPIC,
        doc_id=doc.doc_id,
        text=text or fallback,
        entities=tuple(entities),
        title=doc.title,
    )


_RELATION_LINE = re.compile(r"^\s*RELATION\s*:\s*(.*?)\s*$", re.I | re.M)


def _parse_bridge(text: str) -> str | None:
    m = _RELATION_LINE.search(text)
    if m is None:
        raise WholeResponseUnparseable(f"no RELATION line in {text[:80]!r}")
    rel = m.group(1).strip().strip("\"'.")
    if not rel or rel.upper() == "NONE":
        return None
    return rel


def bridge_candidates(
    topics: Sequence[GraphNode], similarity: Callable[[str, str], float], tau_bridge: float
) -> list[tuple[GraphNode, GraphNode]]:
    """Topic pairs sharing an entity or with text similarity of at least ``tau_bridge``."""
    ordered = sorted(topics, key=lambda t: t.id)
    out = []
    for i, a in enumerate(ordered):
        for b in ordered[i + 1 :]:
            if set(a.entities) & set(b.entities) or similarity(a.search_text, b.search_text) >= tau_bridge:
                out.append((a, b))
    return out


def bridge_topics(
    topics: Sequence[GraphNode],
    similarity: Callable[[str, str], float],
    llm: ChatClient,
    tau_bridge: float,
    workers: int = 1,
) -> list[GraphEdge]:
    if len(topics) < 2:
        return []
    pairs = bridge_candidates(topics, similarity, tau_bridge)

    def ask(pair):
        a, b = pair
        prompt = templates.render(
            "bridge",
            topic_a=templates.escape(a.text),
            entities_a=", ".join(a.entities) or "(none)",
            topic_b=templates.escape(b.text),
            entities_b=", ".join(b.entities) or "(none)",
        )
        return _ask(llm, prompt, lambda text: (_parse_bridge(text),))

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        replies = list(pool.map(ask, pairs))
    edges = []
    for (a, b), reply in zip(pairs, replies):
        if reply is None:
            log.warning("bridge %s <-> %s skipped after failed calls", a.id, b.id)
        elif reply[0] is not None:
            edges.append(GraphEdge.make(a.id, b.id, EdgeKind.TT, reply[0]))
    return edges


@dataclass
class DocumentStructure:
    """Everything intra-document modeling produced for one document."""

    doc: Document
    sentences: list[Sentence]
    cores: list[int] = field(default_factory=list)
    nn: list[RelationAssertion] = field(default_factory=list)
    assignment: dict[int, list[int]] = field(default_factory=dict)
    ns: list[RelationAssertion] = field(default_factory=list)
    topic: GraphNode | None = None


def structure_document(
    doc: Document, llm: ChatClient, config: BuildConfig, similarity: Callable[[str, str], float]
) -> DocumentStructure:
    sentences = segment_sentences(doc)
    result = DocumentStructure(doc, sentences)
    if sentences:
        result.cores, result.nn = identify_core_sentences(sentences, llm, config.max_core_fraction)
        texts = {s.index: s.text for s in sentences}
        result.assignment = assign_satellites(
            result.cores, sentences, lambda s, c: similarity(texts[s], texts[c]), config.alpha
        )
        result.ns = link_satellites(result.assignment, sentences, llm)
    core_sents = [s for s in sentences if s.index in set(result.cores)]
    result.topic = build_topic(doc, core_sents, llm)
    return result


def _created_stamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    moment = datetime.fromtimestamp(int(epoch), timezone.utc) if epoch else datetime.now(timezone.utc)
    return moment.strftime("%Y-%m-%dT%H:%M:%SZ")


def build_graph(
    corpus: Sequence[Document],
    llm: ChatClient,
    config: BuildConfig = BuildConfig(),
    similarity: Callable[[str, str], float] = lexical_cosine,
    created: str | None = None,
) -> SentenceGraph:
    """Build, validate and freeze the sentence logic graph for ``corpus``.

    Documents are structured concurrently; results are merged in doc_id
    order so the graph does not depend on scheduling.
    """
    if not corpus:
        raise ValueError("corpus is empty")
    docs = sorted(corpus, key=lambda d: d.doc_id)
    with ThreadPoolExecutor(max_workers=config.llm_concurrency) as pool:
        structures = list(pool.map(lambda d: structure_document(d, llm, config, similarity), docs))

    graph = SentenceGraph(
        meta={
            "config": asdict(config),
            "config_fingerprint": config.fingerprint(),
            "created": created or _created_stamp(),
            "documents": len(docs),
            "prompt_templates": templates.TEMPLATE_VERSION,
        }
    )
    for st in structures:
        doc_id = st.doc.doc_id
        graph.add_node(st.topic)
        core_set = set(st.cores)
        for s in st.sentences:
            layer = Layer.CORE if s.index in core_set else Layer.SUPPLEMENTARY
            graph.add_node(GraphNode(sentence_node_id(doc_id, s.index), layer, doc_id, s.text, s.index))
        for c in st.cores:
            graph.add_edge(GraphEdge.make(st.topic.id, sentence_node_id(doc_id, c), EdgeKind.TC))
        for rel in st.nn:
            graph.add_edge(
                GraphEdge.make(sentence_node_id(doc_id, rel.src_sent), sentence_node_id(doc_id, rel.dst_sent),
                               EdgeKind.CC, rel.label)
            )
        for rel in st.ns:
            graph.add_edge(
                GraphEdge.make(sentence_node_id(doc_id, rel.src_sent), sentence_node_id(doc_id, rel.dst_sent),
                               EdgeKind.CS, rel.label)
            )
        log.info("built doc=%s cores=%d sats=%d", doc_id, len(st.cores), len(st.sentences) - len(st.cores))

    for edge in bridge_topics([st.topic for st in structures], similarity, llm, config.tau_bridge,
                              workers=config.llm_concurrency):
        graph.add_edge(edge)

    violations = graph.validate()
    if violations:
        raise BuildError(violations)
    return graph.freeze()
