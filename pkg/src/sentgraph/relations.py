"""Reduced RST relation inventory, relation prompts and response parsing.

Two disjoint label families are used: Nucleus-Nucleus relations link core
sentences of equal weight, Nucleus-Satellite relations link a core
sentence to one of its supporting sentences.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import templates
from .corpus import Sentence

__all__ = [
    "NNRelation",
    "NSRelation",
    "RelationAssertion",
    "RelationKind",
    "WholeResponseUnparseable",
    "parse_core_indices",
    "parse_label",
    "parse_relation_response",
    "render_nn_prompt",
    "render_ns_prompt",
]


class WholeResponseUnparseable(ValueError):
    """The response contains nothing in the requested format at all."""


class RelationKind(str, enum.Enum):
    NN = "NN"
    NS = "NS"


class NNRelation(str, enum.Enum):
    Conjunction = "Conjunction"
    Contrast = "Contrast"
    Disjunction = "Disjunction"
    MultinuclearRestatement = "MultinuclearRestatement"
    Sequence = "Sequence"

    def __str__(self) -> str:
        return self.value

    @property
    def symmetric(self) -> bool:
        return self is not NNRelation.Sequence


class NSRelation(str, enum.Enum):
    Cause = "Cause"
    Result = "Result"
    Opposition = "Opposition"
    Elaboration = "Elaboration"
    Circumstance = "Circumstance"
    Evaluation = "Evaluation"
    Solutionhood = "Solutionhood"

    def __str__(self) -> str:
        return self.value


NN_DEFINITIONS = {
    NNRelation.Conjunction: "the sentences state related facts that hold together.",
    NNRelation.Contrast: "the sentences state facts of equal weight that differ or oppose each other.",
    NNRelation.Disjunction: "the sentences state alternatives.",
    NNRelation.MultinuclearRestatement: "the sentences state the same fact in different words.",
    NNRelation.Sequence: "the sentences state events or steps that follow one another in order.",
}
NS_DEFINITIONS = {
    NSRelation.Cause: "the satellite states a cause of the nucleus.",
    NSRelation.Result: "the satellite states a result or consequence of the nucleus.",
    NSRelation.Opposition: "the satellite states something that runs against or concedes to the nucleus.",
    NSRelation.Elaboration: "the satellite adds detail about the nucleus.",
    NSRelation.Circumstance: "the satellite gives the time, place or situation of the nucleus.",
    NSRelation.Evaluation: "the satellite assesses or comments on the nucleus.",
    NSRelation.Solutionhood: "the nucleus solves a problem stated by the satellite.",
}


def _key(label: str) -> str:
    return re.sub(r"[^a-z]", "", label.lower())


_NN_LOOKUP = {_key(r.value): r for r in NNRelation}
_NN_LOOKUP["restatement"] = NNRelation.MultinuclearRestatement
_NS_LOOKUP = {_key(r.value): r for r in NSRelation}


def parse_label(text: str, kind: RelationKind | str) -> NNRelation | NSRelation | None:
    """Case-insensitive label lookup within one family; ``None`` if unknown."""
    lookup = _NN_LOOKUP if RelationKind(kind) is RelationKind.NN else _NS_LOOKUP
    return lookup.get(_key(text))


@dataclass(frozen=True)
class RelationAssertion:
    """A labelled relation between two sentences of one document, by sentence index."""

    src_sent: int
    dst_sent: int
    kind: RelationKind
    label: NNRelation | NSRelation
    doc_id: str = ""

    def __post_init__(self):
        if self.src_sent == self.dst_sent:
            raise ValueError("a relation needs two distinct sentences")
        family = NNRelation if self.kind is RelationKind.NN else NSRelation
        if not isinstance(self.label, family):
            raise ValueError(f"label {self.label!r} does not belong to kind {self.kind.value}")


def _label_lines(definitions: dict) -> str:
    return "\n".join(f"- {label.value}: {text}" for label, text in definitions.items())


def _sentence_lines(sentences: Iterable[Sentence]) -> str:
    return "\n".join(f"[{s.index}] {templates.escape(s.text)}" for s in sentences)


def render_nn_prompt(sentences: Sequence[Sentence]) -> str:
    if not sentences:
        raise ValueError("cannot render an N-N prompt for zero sentences")
    return templates.render(
        "nn_relations",
        sentences=_sentence_lines(sentences),
        labels=_label_lines(NN_DEFINITIONS),
    )


def render_ns_prompt(core: Sentence, satellites: Sequence[Sentence]) -> str:
    if not satellites:
        raise ValueError("cannot render an N-S prompt without satellites")
    return templates.render(
        "ns_relations",
        nucleus_index=str(core.index),
        nucleus=templates.escape(core.text),
        satellites=_sentence_lines(satellites),
        labels=_label_lines(NS_DEFINITIONS),
    )


_FENCE = re.compile(r"```[^\n]*\n(.*?)```", re.S)
_TRIPLE = re.compile(r"\(\s*(\d+)\s*,\s*(\d+)\s*,\s*([A-Za-z][A-Za-z _\-]*?)\s*\)")
_CORE = re.compile(r"^\s*CORE\s*:\s*(.*)$", re.I | re.M)


def _body(text: str) -> tuple[str, bool]:
    m = _FENCE.search(text)
    if m:
        return m.group(1), True
    return text, False


def parse_relation_response(
    text: str, kind: RelationKind | str, valid_indices: Iterable[int]
) -> list[RelationAssertion]:
    """Extract ``(i, j, LABEL)`` triples from a model reply.

    Triples with out-of-range indices, self-loops or labels outside the
    requested family are dropped. Symmetric N-N labels are stored with
    the lower index first. Raises WholeResponseUnparseable when the reply
    has neither a fenced block, a CORE line nor any triple.
    """
    kind = RelationKind(kind)
    valid = set(valid_indices)
    body, fenced = _body(text)
    matches = _TRIPLE.findall(body)
    if not matches and not fenced and not _CORE.search(text):
        raise WholeResponseUnparseable(f"no relation triples found in reply: {text[:120]!r}")

    out: list[RelationAssertion] = []
    seen: set[tuple[int, int, str]] = set()
    for a, b, raw_label in matches:
        i, j = int(a), int(b)
        label = parse_label(raw_label, kind)
        if label is None or i == j or i not in valid or j not in valid:
            continue
        if kind is RelationKind.NN and label.symmetric and i > j:
            i, j = j, i
        if (i, j, label.value) in seen:
            continue
        seen.add((i, j, label.value))
        out.append(RelationAssertion(i, j, kind, label))
    return out


def parse_core_indices(text: str, valid_indices: Iterable[int]) -> list[int] | None:
    """Indices on the ``CORE:`` line in reply order, or ``None`` if absent."""
    m = _CORE.search(_body(text)[0]) or _CORE.search(text)
    if m is None:
        return None
    valid = set(valid_indices)
    out: list[int] = []
    for tok in re.findall(r"\d+", m.group(1)):
        i = int(tok)
        if i in valid and i not in out:
            out.append(i)
    return out
