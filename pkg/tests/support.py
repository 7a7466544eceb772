"""Test helpers: a rule-driven fixture model and script recording.

The fixture model answers each prompt family from per-document tables.
Tests record its replies through a ChatClient ledger and replay them with
the fingerprint-keyed ScriptedProvider, so the code under test only ever
sees the scripted provider.
"""

from __future__ import annotations

import json
import re
from pathlib import Path

from sentgraph.corpus import Document, segment_sentences
from sentgraph.graph import (
    EdgeKind,
    GraphEdge,
    GraphNode,
    Layer,
    SentenceGraph,
    sentence_node_id,
    topic_node_id,
)
from sentgraph.llm import ChatClient, FunctionProvider, ScriptedProvider, load_script

FENCE = "```"


def fenced(*lines: str) -> str:
    return "\n".join([FENCE, *lines, FENCE])


class FixtureModel:
    def __init__(
        self,
        docs: list[Document],
        nn: dict | None = None,
        ns: dict | None = None,
        summaries: dict | None = None,
        entities: dict | None = None,
        bridges: dict | None = None,
        refine=None,
        answers: dict | None = None,
        default_answer: str = "unknown",
    ):
        self.nn = nn or {}
        self.ns = ns or {}
        self.summaries = summaries or {}
        self.entities = entities or {}
        self.bridges = {frozenset(k): v for k, v in (bridges or {}).items()}
        self.refine = refine
        self.answers = answers or {}
        self.default_answer = default_answer
        self.sentence_doc: dict[str, str] = {}
        self.first_sentence: dict[str, str] = {}
        self.topic_text: dict[str, str] = {}
        for d in docs:
            sents = segment_sentences(d)
            for s in sents:
                self.sentence_doc[s.text] = d.doc_id
            if d.title:
                self.topic_text[d.title] = d.doc_id
        for doc_id, summary in self.summaries.items():
            self.topic_text[summary] = doc_id

    def _doc_of_listing(self, prompt: str, pattern: str) -> str:
        for line in re.findall(pattern, prompt, re.M):
            if line in self.sentence_doc:
                return self.sentence_doc[line]
        raise LookupError(f"no fixture document for prompt:\n{prompt}")

    def __call__(self, prompt: str) -> str:
        if "Mark the core sentences" in prompt:
            doc = self._doc_of_listing(prompt, r"^\[\d+\] (.*)$")
            return self.nn.get(doc, fenced("CORE: 0"))
        if "Candidate satellite sentences:" in prompt:
            nucleus = int(re.search(r"Nucleus sentence:\n\[(\d+)\]", prompt).group(1))
            doc = self._doc_of_listing(prompt, r"^\[\d+\] (.*)$")
            sats = [int(i) for i in re.findall(r"^\[(\d+)\]", prompt.split("Candidate satellite sentences:")[1], re.M)]
            labels = self.ns.get(doc, {})
            return fenced(*(f"({nucleus}, {s}, {labels.get(s, 'Elaboration')})" for s in sats))
        if "Summarise the topic" in prompt:
            doc = self._doc_of_listing(prompt, r"^- (.*)$")
            return self.summaries.get(doc, f"About {doc}.")
        if "List the named entities" in prompt:
            doc = self._doc_of_listing(prompt, r"^- (.*)$")
            return fenced(*self.entities.get(doc, []))
        if "Two documents are summarised" in prompt:
            a = self.topic_text.get(re.search(r"^Topic A: (.*)$", prompt, re.M).group(1))
            b = self.topic_text.get(re.search(r"^Topic B: (.*)$", prompt, re.M).group(1))
            return "RELATION: " + self.bridges.get(frozenset({a, b}), "NONE")
        if "You are selecting evidence" in prompt:
            question = re.search(r"^Question: (.*)$", prompt, re.M).group(1)
            lines = re.findall(r"^\[(\d+)\] (.*)$", prompt, re.M)
            if callable(self.refine):
                return self.refine(question, lines)
            if isinstance(self.refine, dict) and question in self.refine:
                return self.refine[question]
            return f"KEEP: {', '.join(i for i, _ in lines)}\nVERDICT: INSUFFICIENT"
        if "Answer the question using only the evidence" in prompt:
            question = re.search(r"^Question: (.*)$", prompt, re.M).group(1)
            return self.answers.get(question, self.default_answer)
        raise LookupError(f"unrecognised prompt:\n{prompt}")


def record(model: FixtureModel, run, tmp_path: Path, name: str = "script.jsonl") -> Path:
    """Run ``run(client)`` against the fixture model and save the exchanges as a script."""
    path = tmp_path / name
    if path.exists():
        path.unlink()
    client = ChatClient(FunctionProvider(model), model="scripted", ledger_path=path, concurrency=1)
    run(client)
    return path


def scripted_client(script_path: Path | dict, concurrency: int = 1) -> ChatClient:
    script = script_path if isinstance(script_path, dict) else load_script(script_path)
    return ChatClient(ScriptedProvider(script), model="scripted", concurrency=concurrency)


def write_jsonl(path: Path, records) -> Path:
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


# three documents; hand counts: 3 topics, 5 cores, 7 supplementary,
# tc=5, cc=2, cs=7, tt=1
THREE_DOCS = [
    Document(
        "d1",
        "Barack Obama was born in Honolulu, Hawaii. He served as the 44th president of the United States. "
        "Before that, he was a senator from Illinois. His presidency began in 2009.",
        "Barack Obama",
    ),
    Document(
        "d2",
        "Honolulu is the capital of Hawaii. It lies on the island of Oahu. The city is known for Waikiki beach.",
        "Honolulu",
    ),
    Document(
        "d3",
        "The Eiffel Tower stands in Paris. It was completed in 1889. Gustave Eiffel's company designed and built it. "
        "Millions of people visit it every year. It is made of wrought iron.",
    ),
]


def three_doc_model(**overrides) -> FixtureModel:
    kw = dict(
        nn={
            "d1": fenced("CORE: 0, 1", "(0, 1, conjunction)"),
            "d2": fenced("CORE: 0"),
            "d3": fenced("CORE: 0, 2", "(2, 0, contrast)"),
        },
        ns={"d1": {3: "Circumstance"}, "d3": {1: "circumstance", 4: "Elaboration"}},
        summaries={"d3": "The Eiffel Tower is a wrought-iron landmark in Paris."},
        entities={
            "d1": ["Barack Obama", "Honolulu", "United States", "barack obama"],
            "d2": ["Honolulu", "Hawaii", "Oahu"],
            "d3": ["Eiffel Tower", "Paris"],
        },
        bridges={("d1", "d2"): "was born in"},
    )
    kw.update(overrides)
    return FixtureModel(THREE_DOCS, **kw)


def random_graph(rng, max_nodes: int = 30) -> SentenceGraph:
    """A valid random layered graph with at most ``max_nodes`` nodes.

    Cycles come from cc edges among the cores of a document and tt edges
    among topics; every core hangs off its topic and every supplementary
    sentence off one core.
    """
    g = SentenceGraph()
    total = 0
    docs = []
    for d in range(rng.randint(1, 4)):
        if total + 2 > max_nodes:
            break
        doc = f"d{d}"
        g.add_node(GraphNode(topic_node_id(doc), Layer.TOPIC, doc, f"topic {doc} {rng.choice(WORDS)}"))
        total += 1
        n_core = rng.randint(1, min(5, max_nodes - total))
        cores = []
        for i in range(n_core):
            nid = sentence_node_id(doc, i)
            g.add_node(GraphNode(nid, Layer.CORE, doc, _words(rng), sent_index=i))
            g.add_edge(GraphEdge.make(topic_node_id(doc), nid, EdgeKind.TC))
            cores.append(nid)
        total += n_core
        for a in range(n_core):
            for b in range(a + 1, n_core):
                if rng.random() < 0.4:
                    g.add_edge(GraphEdge.make(cores[a], cores[b], EdgeKind.CC,
                                              rng.choice(["Conjunction", "Contrast", "Sequence"])))
        n_sup = rng.randint(0, min(4, max_nodes - total))
        for j in range(n_sup):
            i = n_core + j
            nid = sentence_node_id(doc, i)
            g.add_node(GraphNode(nid, Layer.SUPPLEMENTARY, doc, _words(rng), sent_index=i))
            g.add_edge(GraphEdge.make(rng.choice(cores), nid, EdgeKind.CS, "Elaboration"))
        total += n_sup
        docs.append(doc)
    for a in range(len(docs)):
        for b in range(a + 1, len(docs)):
            if rng.random() < 0.6:
                g.add_edge(GraphEdge.make(topic_node_id(docs[a]), topic_node_id(docs[b]), EdgeKind.TT, "related"))
    assert g.validate() == []
    return g.freeze()


WORDS = ["paris", "tower", "iron", "river", "city", "born", "president", "island", "beach", "capital"]


def _words(rng) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(2, 6))) + "."
