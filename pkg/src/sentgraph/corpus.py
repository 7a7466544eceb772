"""Document and QA-dataset ingestion, and rule-based sentence segmentation."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "ABBREVIATIONS",
    "CorpusError",
    "Document",
    "QAItem",
    "Sentence",
    "SplitMix64",
    "ingest_corpus",
    "load_qa_dataset",
    "sample_indices",
    "segment_sentences",
]

ABBREVIATIONS = frozenset(
    {"dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "e.g.", "i.e.", "etc.", "u.s.", "no."}
)
MIN_SENTENCE_CHARS = 3

_MASK64 = (1 << 64) - 1
_PARAGRAPH_BREAK = re.compile(r"\n[ \t\r\f\v]*\n")
# terminal punctuation, optional closing quotes/brackets, then whitespace
_BOUNDARY = re.compile(r"[.!?]+[\"'”’)\]]*\s+")
_OPENERS = "\"'“‘([{"


class CorpusError(ValueError):
    """Raised for unreadable or malformed corpus and QA files."""

    def __init__(self, message: str, path: str | Path | None = None, line: int | None = None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: str | None = None


@dataclass(frozen=True)
class Sentence:
    sent_id: str
    doc_id: str
    index: int
    text: str
    paragraph: int = 0


@dataclass(frozen=True)
class QAItem:
    question_id: str
    question: str
    gold_answers: tuple[str, ...]
    answer_type: str | None = None
    extra: dict = field(default_factory=dict, compare=False, repr=False)


def _read_jsonl(path: str | Path):
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        raise CorpusError(f"cannot read file ({exc})", path) from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"invalid JSON ({exc.msg})", path, lineno) from exc
        if not isinstance(record, dict):
            raise CorpusError("record is not a JSON object", path, lineno)
        yield lineno, record


def ingest_corpus(path: str | Path) -> list[Document]:
    """Read a JSONL corpus file into documents, preserving file order."""
    docs: list[Document] = []
    seen: dict[str, int] = {}
    for lineno, rec in _read_jsonl(path):
        doc_id = rec.get("doc_id")
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusError("missing or empty 'doc_id'", path, lineno)
        text = rec.get("text")
        if not isinstance(text, str):
            raise CorpusError(f"doc {doc_id!r}: missing 'text' string", path, lineno)
        title = rec.get("title")
        if title is not None and not isinstance(title, str):
            raise CorpusError(f"doc {doc_id!r}: 'title' must be a string", path, lineno)
        if doc_id in seen:
            raise CorpusError(
                f"duplicate doc_id {doc_id!r} (first seen on line {seen[doc_id]})", path, lineno
            )
        seen[doc_id] = lineno
        docs.append(Document(doc_id=doc_id, text=text, title=title or None))
    return docs


def _is_abbreviation(paragraph: str, punct_start: int, punct_end: int) -> bool:
    word_start = punct_start
    while word_start > 0 and not paragraph[word_start - 1].isspace():
        word_start -= 1
    word = paragraph[word_start:punct_end].lstrip(_OPENERS).lower()
    if word in ABBREVIATIONS:
        return True
    # single-letter initials such as "George W. Bush"
    return len(word) == 2 and word[1] == "." and paragraph[punct_start - 1 : punct_start].isupper()


def _split_paragraph(paragraph: str) -> list[str]:
    pieces: list[str] = []
    start = 0
    for m in _BOUNDARY.finditer(paragraph):
        nxt = paragraph[m.end() : m.end() + 1]
        if not nxt or not (nxt.isupper() or nxt.isdigit() or nxt in _OPENERS):
            continue
        punct_end = m.start()
        while punct_end < len(paragraph) and paragraph[punct_end] in ".!?":
            punct_end += 1
        if paragraph[m.start()] == "." and _is_abbreviation(paragraph, m.start(), punct_end):
            continue
        pieces.append(paragraph[start : m.end()])
        start = m.end()
    pieces.append(paragraph[start:])
    return [" ".join(p.split()) for p in pieces if p.strip()]


def segment_sentences(doc: Document) -> list[Sentence]:
    """Split ``doc.text`` into sentences.

    Paragraphs (blank-line separated) never share a sentence. Fragments
    shorter than ``MIN_SENTENCE_CHARS`` are merged into the preceding
    sentence, or into the following one when they open the document.
    Internal whitespace runs are collapsed to single spaces.
    """
    units: list[tuple[str, int]] = []
    for para_no, paragraph in enumerate(p for p in _PARAGRAPH_BREAK.split(doc.text) if p.strip()):
        units.extend((text, para_no) for text in _split_paragraph(paragraph))

    merged: list[list] = []
    pending = ""
    for text, para in units:
        if pending:
            text = f"{pending} {text}"
            pending = ""
        if len(text) < MIN_SENTENCE_CHARS:
            if merged:
                merged[-1][0] = f"{merged[-1][0]} {text}"
            else:
                pending = text
            continue
        merged.append([text, para])
    if pending:
        merged.append([pending, 0])

    return [
        Sentence(sent_id=f"{doc.doc_id}:{i}", doc_id=doc.doc_id, index=i, text=text, paragraph=para)
        for i, (text, para) in enumerate(merged)
    ]


class SplitMix64:
    """SplitMix64 generator (Steele, Lea & Flood 2014); 64-bit state, 64-bit outputs."""

    def __init__(self, seed: int):
        self.state = seed & _MASK64

    def next(self) -> int:
        self.state = (self.state + 0x9E3779B97F4A7C15) & _MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
        return z ^ (z >> 31)

    def below(self, bound: int) -> int:
        """Uniform integer in ``[0, bound)`` by rejection of the biased tail."""
        if bound <= 0:
            raise ValueError("bound must be positive")
        limit = ((1 << 64) // bound) * bound
        while True:
            x = self.next()
            if x < limit:
                return x % bound


def sample_indices(population: int, n: int, seed: int) -> list[int]:
    """Seeded uniform sample of ``n`` distinct indices, returned ascending.

    Partial Fisher-Yates over ``range(population)`` driven by SplitMix64.
    """
    if n < 0:
        raise ValueError("sample size must be non-negative")
    if n >= population:
        return list(range(population))
    rng = SplitMix64(seed)
    pool = list(range(population))
    for i in range(n):
        j = i + rng.below(population - i)
        pool[i], pool[j] = pool[j], pool[i]
    return sorted(pool[:n])


def load_qa_dataset(path: str | Path, sample_n: int | None = None, seed: int = 0) -> list[QAItem]:
    if sample_n is not None and sample_n < 0:
        raise ValueError("sample_n must be non-negative")
    items: list[QAItem] = []
    for lineno, rec in _read_jsonl(path):
        qid = rec.get("question_id")
        question = rec.get("question")
        golds = rec.get("gold_answers")
        if not isinstance(qid, str) or not qid:
            raise CorpusError("missing or empty 'question_id'", path, lineno)
        if not isinstance(question, str):
            raise CorpusError(f"item {qid!r}: missing 'question' string", path, lineno)
        if (
            not isinstance(golds, list)
            or not golds
            or not all(isinstance(g, str) for g in golds)
        ):
            raise CorpusError(f"item {qid!r}: 'gold_answers' must be a nonempty string list", path, lineno)
        answer_type = rec.get("answer_type")
        if answer_type is not None and not isinstance(answer_type, str):
            raise CorpusError(f"item {qid!r}: 'answer_type' must be a string", path, lineno)
        items.append(QAItem(qid, question, tuple(golds), answer_type))
    if sample_n is None:
        return items
    return [items[i] for i in sample_indices(len(items), sample_n, seed)]
