"""Online stage: anchor selection and refinement, path expansion, answer generation."""

from __future__ import annotations

import json
import logging
import re
from collections import deque
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from . import templates
from .corpus import Document
from .graph import FORMAT_VERSION, Layer, SentenceGraph, topic_node_id
from .llm import ChatClient, ChatResponse, ProviderError, UsageSummary, usage_ledger
from .relations import WholeResponseUnparseable
from .retrieval import LexicalRanker, Ranker, ScoredNode, rank_nodes

__all__ = [
    "Answer",
    "EvidenceItem",
    "PassageBaseline",
    "Path",
    "PipelineConfig",
    "RefinementOutcome",
    "answer_query",
    "answer_to_json",
    "assemble_evidence",
    "expand_paths",
    "generate_answer",
    "refine_anchors",
    "select_anchors",
]

log = logging.getLogger(__name__)

Path = tuple[str, ...]


@dataclass(frozen=True)
class PipelineConfig:
    k_anchors: int = 20
    max_path_len: int = 2
    branch_width: int = 2
    node_budget: int = 10
    max_evidence: int = 12
    expansion_scoring: str = "query"
    anchor_layers: tuple[str, ...] | None = None

    def __post_init__(self):
        for name in ("k_anchors", "branch_width", "node_budget", "max_evidence"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least 1")
        if self.max_path_len < 0:
            raise ValueError("max_path_len must be non-negative")
        if self.expansion_scoring not in ("query", "tail"):
            raise ValueError("expansion_scoring must be 'query' or 'tail'")
        if self.anchor_layers is not None:
            object.__setattr__(self, "anchor_layers", tuple(Layer(x).value for x in self.anchor_layers))


@dataclass(frozen=True)
class RefinementOutcome:
    kept: list[str]
    sufficient: bool
    parsed: bool = True


@dataclass(frozen=True)
class EvidenceItem:
    node_id: str
    text: str
    doc_id: str
    sent_index: int | None
    title: str | None = None


@dataclass
class Answer:
    text: str
    evidence: list[EvidenceItem]
    usage: UsageSummary
    trace: dict = field(default_factory=dict)

    def to_dict(self, include_trace: bool = True) -> dict:
        out = {
            "answer": self.text,
            "evidence": [{"node_id": e.node_id, "text": e.text} for e in self.evidence],
            "usage": {
                "calls": self.usage.calls,
                "prompt_tokens": self.usage.prompt_tokens,
                "completion_tokens": self.usage.completion_tokens,
            },
            "version": FORMAT_VERSION,
        }
        if include_trace:
            out["trace"] = self.trace
        return out


def answer_to_json(answer: Answer, include_trace: bool = True) -> str:
    """Canonical JSON shared by the CLI and the HTTP service."""
    return json.dumps(answer.to_dict(include_trace), sort_keys=True, ensure_ascii=False, separators=(",", ":"))


class _Metered:
    """Per-query view of a chat client that keeps every response for accounting."""

    def __init__(self, llm: ChatClient):
        self.llm = llm
        self.responses: list[ChatResponse] = []

    def chat(self, prompt: str, system: str | None = None) -> ChatResponse:
        response = self.llm.chat(prompt, system)
        self.responses.append(response)
        return response


def _all_scores(ranker: Ranker, query: str, graph: SentenceGraph) -> dict[str, float]:
    try:
        scores = dict(ranker.score_all(query))
    except TypeError:
        scores = {}
    missing = [nid for nid in graph.nodes if nid not in scores]
    for nid in missing:
        scores[nid] = ranker.score(query, nid)
    return scores


def select_anchors(
    query: str,
    graph: SentenceGraph,
    ranker: Ranker,
    k: int,
    layer_filter=None,
    scores: Mapping[str, float] | None = None,
) -> list[ScoredNode]:
    if not graph.nodes:
        return []
    return rank_nodes(ranker, query, graph, k, layer_filter, scores=scores)


_KEEP = re.compile(r"^\s*KEEP\s*:\s*(.*)$", re.I | re.M)


def _parse_refinement(text: str, n: int) -> tuple[list[int], bool]:
    keep = _KEEP.search(text)
    if keep is None:
        raise WholeResponseUnparseable("no KEEP line")
    if re.search(r"\bINSUFFICIENT\b", text, re.I):
        sufficient = False
    elif re.search(r"\bSUFFICIENT\b", text, re.I):
        sufficient = True
    else:
        raise WholeResponseUnparseable("no SUFFICIENT/INSUFFICIENT verdict")
    picked = sorted({int(t) for t in re.findall(r"\d+", keep.group(1)) if int(t) < n})
    return picked, sufficient


def _anchor_line(i: int, graph: SentenceGraph, node_id: str) -> str:
    node = graph.node(node_id)
    text = templates.escape(node.search_text)
    if node.layer is Layer.TOPIC:
        return f"[{i}] (document topic) {text}"
    return f"[{i}] {text}"


def refine_anchors(query: str, anchors: Sequence[ScoredNode], graph: SentenceGraph, llm) -> RefinementOutcome:
    """Let the model drop loosely related anchors and judge sufficiency.

    Fails open: if no usable reply arrives after one reminder, every
    anchor is kept and the evidence is judged insufficient.
    """
    if not anchors:
        raise ValueError("refinement needs at least one anchor")
    prompt = templates.render(
        "anchor_refinement",
        question=templates.escape(query),
        anchors="\n".join(_anchor_line(i, graph, a.node_id) for i, a in enumerate(anchors)),
    )
    for attempt in range(2):
        text = prompt if attempt == 0 else prompt + "\n" + templates.format_reminder()
        try:
            picked, sufficient = _parse_refinement(llm.chat(text).text, len(anchors))
        except (WholeResponseUnparseable, ProviderError) as exc:
            log.debug("refinement attempt %d unusable: %s", attempt + 1, exc)
            continue
        return RefinementOutcome([anchors[i].node_id for i in picked], sufficient)
    return RefinementOutcome([a.node_id for a in anchors], False, parsed=False)


def expand_paths(
    query: str,
    kept_anchors: Sequence[str],
    graph: SentenceGraph,
    ranker: Ranker,
    config: PipelineConfig,
    scores: Mapping[str, float] | None = None,
) -> list[Path]:
    """Breadth-first path growth from each anchor.

    A popped path is extended by the ``branch_width`` best-scoring
    neighbours of its tail that this anchor has not visited yet. Paths stop
    at ``max_path_len`` hops, and an anchor stops once ``node_budget`` new
    nodes have been added. Returns the maximal paths, anchor by anchor.
    """
    if scores is None:
        scores = {}

    def score(tail: str, node_id: str) -> float:
        if config.expansion_scoring == "tail":
            return ranker.score(graph.node(tail).search_text, node_id)
        if node_id in scores:
            return scores[node_id]
        return ranker.score(query, node_id)

    out: list[Path] = []
    for anchor in kept_anchors:
        visited = {anchor}
        added = 0
        queue: deque[Path] = deque([(anchor,)])
        while queue:
            path = queue.popleft()
            if len(path) - 1 >= config.max_path_len or added >= config.node_budget:
                out.append(path)
                continue
            tail = path[-1]
            fresh = sorted({nid for nid, _ in graph.neighbors(tail)} - visited)
            ranked = sorted(fresh, key=lambda nid: (-score(tail, nid), nid))[: config.branch_width]
            extended = False
            for nid in ranked:
                if added >= config.node_budget:
                    break
                visited.add(nid)
                added += 1
                queue.append(path + (nid,))
                extended = True
            if not extended:
                out.append(path)
    return out


def assemble_evidence(
    paths: Sequence[Path],
    graph: SentenceGraph,
    max_evidence: int,
    anchor_scores: Mapping[str, float] | None = None,
) -> list[EvidenceItem]:
    """Sentence nodes on the paths, deduplicated and in document order.

    Over the cap, nodes reached from higher-scoring anchors win, then
    nodes fewer hops from their anchor, then document order.
    """
    anchor_scores = anchor_scores or {}
    best: dict[str, tuple[float, int]] = {}
    for path in paths:
        prov = float(anchor_scores.get(path[0], 0.0))
        for hop, nid in enumerate(path):
            node = graph.node(nid)
            if not node.layer.is_sentence:
                continue
            key = (-prov, hop)
            if nid not in best or key < best[nid]:
                best[nid] = key

    def position(nid: str):
        node = graph.nodes[nid]
        return node.doc_id, node.sent_index

    chosen = list(best)
    if len(chosen) > max_evidence:
        chosen = sorted(chosen, key=lambda nid: (best[nid], position(nid)))[:max_evidence]
    chosen.sort(key=position)

    items = []
    for nid in chosen:
        node = graph.nodes[nid]
        topic = graph.nodes.get(topic_node_id(node.doc_id))
        items.append(EvidenceItem(nid, node.text, node.doc_id, node.sent_index, topic.title if topic else None))
    return items


def _evidence_block(evidence: Sequence[EvidenceItem]) -> str:
    if not evidence:
        return "(no evidence retrieved)"
    return "\n".join(
        f"[{i}] ({templates.escape(e.title or e.doc_id)}) {templates.escape(e.text)}"
        for i, e in enumerate(evidence, start=1)
    )


def generate_answer(query: str, evidence: Sequence[EvidenceItem], llm) -> str:
    """Model answer over the numbered evidence; provider errors propagate."""
    prompt = templates.render("answer", evidence=_evidence_block(evidence), question=templates.escape(query))
    return llm.chat(prompt).text.strip()


def answer_query(
    query: str,
    graph: SentenceGraph,
    ranker: Ranker,
    llm: ChatClient,
    config: PipelineConfig = PipelineConfig(),
) -> Answer:
    metered = _Metered(llm)
    scores = _all_scores(ranker, query, graph)
    anchors = select_anchors(query, graph, ranker, config.k_anchors, config.anchor_layers, scores)
    anchor_scores = {a.node_id: a.score for a in anchors}

    if anchors:
        refinement = refine_anchors(query, anchors, graph, metered)
    else:
        refinement = RefinementOutcome([], False, parsed=False)

    if refinement.sufficient:
        paths: list[Path] = []
        for nid in refinement.kept:
            if graph.nodes[nid].layer is Layer.TOPIC:
                paths.extend((nid, child) for child in graph.children(nid))
            else:
                paths.append((nid,))
    else:
        paths = expand_paths(query, refinement.kept, graph, ranker, config, scores)

    evidence = assemble_evidence(paths, graph, config.max_evidence, anchor_scores)
    text = generate_answer(query, evidence, metered)
    usage = usage_ledger(metered.responses)
    trace = {
        "query": query,
        "anchors": [[a.node_id, a.score] for a in anchors],
        "refinement": {
            "kept": list(refinement.kept),
            "sufficient": refinement.sufficient,
            "parsed": refinement.parsed,
        },
        "expanded": not refinement.sufficient,
        "paths": [list(p) for p in paths],
        "evidence": [e.node_id for e in evidence],
        "generation_prompt_tokens": metered.responses[-1].prompt_tokens,
        "usage": {"calls": usage.calls, "prompt_tokens": usage.prompt_tokens,
                  "completion_tokens": usage.completion_tokens},
    }
    return Answer(text, evidence, usage, trace)


class PassageBaseline:
    """Whole-passage retrieval over the same documents, for granularity comparisons."""

    def __init__(self, documents: Sequence[Document], k: int = 2, k1: float = 1.2, b: float = 0.75):
        self.documents = {d.doc_id: d for d in documents}
        self.k = k
        self.ranker = LexicalRanker(
            [(d.doc_id, f"{d.title or ''} {d.text}") for d in documents], k1=k1, b=b
        )

    def answer(self, query: str, llm: ChatClient) -> Answer:
        metered = _Metered(llm)
        scores = self.ranker.score_all(query)
        top = sorted(scores, key=lambda d: (-scores[d], d))[: self.k]
        evidence = [
            EvidenceItem(d, " ".join(self.documents[d].text.split()), d, None, self.documents[d].title)
            for d in top
        ]
        text = generate_answer(query, evidence, metered)
        usage = usage_ledger(metered.responses)
        trace = {"query": query, "passages": top, "generation_prompt_tokens": metered.responses[-1].prompt_tokens}
        return Answer(text, evidence, usage, trace)
