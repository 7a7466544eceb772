from __future__ import annotations

from dataclasses import replace
from types import SimpleNamespace

import pytest

from sentgraph import graph as graph_io
from sentgraph.builder import build_graph
from sentgraph.corpus import ingest_corpus
from sentgraph.pipeline import PipelineConfig, answer_query
from sentgraph.retrieval import LexicalRanker
from support import THREE_DOCS, record, three_doc_model, write_jsonl

QUESTIONS = {
    "q1": ("Where was Barack Obama born?", ["Honolulu"]),
    "q2": ("Which island is Honolulu on?", ["Oahu"]),
    "q3": ("When was the Eiffel Tower completed?", ["1889"]),
    "q4": ("What is the Eiffel Tower made of?", ["wrought iron"]),
}
SWEEP = (5, 10, 15, 20, 25, 30)


@pytest.fixture(scope="session")
def world(tmp_path_factory):
    """Corpus, QA file and one recorded script covering build, query and eval runs."""
    tmp = tmp_path_factory.mktemp("world")
    corpus = write_jsonl(tmp / "corpus.jsonl", [
        {"doc_id": d.doc_id, "text": d.text, **({"title": d.title} if d.title else {})} for d in THREE_DOCS
    ])
    qa = write_jsonl(tmp / "qa.jsonl", [
        {"question_id": qid, "question": q, "gold_answers": golds} for qid, (q, golds) in QUESTIONS.items()
    ])
    model = three_doc_model(
        refine={QUESTIONS["q1"][0]: "KEEP: 0\nVERDICT: SUFFICIENT"},
        answers={"Where was Barack Obama born?": "Honolulu", "Which island is Honolulu on?": "Oahu",
                 "When was the Eiffel Tower completed?": "1889",
                 "What is the Eiffel Tower made of?": "iron"},
    )
    graph_path = tmp / "graph.json"

    def run(client):
        g = build_graph(ingest_corpus(corpus), client, created="2024-01-01T00:00:00Z")
        graph_io.save(g, graph_path)
        g = graph_io.load(graph_path)
        ranker = LexicalRanker.from_graph(g)
        for k in SWEEP:
            cfg = replace(PipelineConfig(), k_anchors=k)
            for q, _ in QUESTIONS.values():
                answer_query(q, g, ranker, client, cfg)

    script = record(model, run, tmp, "script.jsonl")
    return SimpleNamespace(tmp=tmp, corpus=corpus, qa=qa, script=script, graph=graph_path, model=model)


# one PASS/FAIL line per acceptance criterion at the end of the run
_CRITERIA: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _CRITERIA[name] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split("_")[2])):
        number = name.split("_")[2]
        label = " ".join(name.split("_")[3:])
        terminalreporter.write_line(f"criterion {number:>2}: {_CRITERIA[name]}  {label}")
