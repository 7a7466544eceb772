"""Answer metrics (EM, token F1, containment accuracy) and the evaluation harness."""

from __future__ import annotations

import json
import logging
import re
import string
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .corpus import QAItem

__all__ = [
    "EvalReport",
    "ItemResult",
    "accuracy_contains",
    "exact_match",
    "normalize_answer",
    "run_eval",
    "token_f1",
]

log = logging.getLogger(__name__)

METRICS = ("em", "f1", "accuracy")
_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = str.maketrans("", "", string.punctuation)


def normalize_answer(s: str) -> str:
    """Lowercase, drop punctuation and articles, collapse whitespace."""
    s = s.lower().translate(_PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def exact_match(pred: str, golds: Sequence[str]) -> int:
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(gold_tokens)
    return 2 * precision * recall / (precision + recall)


def token_f1(pred: str, golds: Sequence[str]) -> float:
    pred_tokens = normalize_answer(pred).split()
    return max(_f1(pred_tokens, normalize_answer(g).split()) for g in golds)


def accuracy_contains(pred: str, golds: Sequence[str]) -> int:
    p = normalize_answer(pred)
    return int(any(normalize_answer(g) in p for g in golds))


@dataclass
class ItemResult:
    question_id: str
    prediction: str
    em: float
    f1: float
    accuracy: float | None
    evidence_units: int
    anchors: int
    prompt_tokens: int
    completion_tokens: int
    error: str | None = None


@dataclass
class EvalReport:
    n: int
    em: float
    f1: float
    accuracy: float | None
    avg_evidence_units: float
    avg_prompt_tokens: float
    avg_completion_tokens: float
    avg_anchors: float
    per_item: list[ItemResult] = field(default_factory=list)
    settings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    def summary_line(self) -> str:
        acc = "-" if self.accuracy is None else f"{self.accuracy:.4f}"
        return (
            f"{self.n} {self.em:.4f} {self.f1:.4f} {acc} {self.avg_evidence_units:.2f} "
            f"{self.avg_prompt_tokens:.1f} {self.avg_completion_tokens:.1f}"
        )

    def write(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n", encoding="utf-8")


SUMMARY_HEADER = "n em f1 acc avg_units avg_in_tok avg_out_tok"


def _mean(values: Iterable[float]) -> float:
    values = list(values)
    return sum(values) / len(values) if values else 0.0


def _score_item(item: QAItem, answer_fn: Callable, metrics: set[str]) -> ItemResult:
    try:
        answer = answer_fn(item)
    except Exception as exc:  # a failing item scores zero; the run goes on
        log.warning("item %s failed: %s", item.question_id, exc)
        return ItemResult(item.question_id, "", 0.0, 0.0, 0.0 if "accuracy" in metrics else None,
                          0, 0, 0, 0, error=f"{type(exc).__name__}: {exc}")
    golds = list(item.gold_answers)
    return ItemResult(
        question_id=item.question_id,
        prediction=answer.text,
        em=float(exact_match(answer.text, golds)),
        f1=token_f1(answer.text, golds),
        accuracy=float(accuracy_contains(answer.text, golds)) if "accuracy" in metrics else None,
        evidence_units=len(answer.evidence),
        anchors=len(answer.trace.get("anchors", ())),
        prompt_tokens=answer.usage.prompt_tokens,
        completion_tokens=answer.usage.completion_tokens,
    )


def run_eval(
    items: Sequence[QAItem],
    answer_fn: Callable,
    metric_set: Iterable[str] = ("em", "f1"),
    workers: int = 1,
    settings: dict | None = None,
) -> EvalReport:
    """Answer every item and aggregate metrics, evidence sizes and token usage.

    ``answer_fn`` takes a QAItem and returns an Answer. Items may run on
    several workers; per-item records keep the input order.
    """
    if not items:
        raise ValueError("no items to evaluate")
    metrics = set(metric_set)
    unknown = metrics - set(METRICS)
    if unknown:
        raise ValueError(f"unknown metrics: {sorted(unknown)}")
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        per_item = list(pool.map(lambda it: _score_item(it, answer_fn, metrics), items))
    return EvalReport(
        n=len(per_item),
        em=_mean(r.em for r in per_item),
        f1=_mean(r.f1 for r in per_item),
        accuracy=_mean(r.accuracy for r in per_item) if "accuracy" in metrics else None,
        avg_evidence_units=_mean(r.evidence_units for r in per_item),
        avg_prompt_tokens=_mean(r.prompt_tokens for r in per_item),
        avg_completion_tokens=_mean(r.completion_tokens for r in per_item),
        avg_anchors=_mean(r.anchors for r in per_item),
        per_item=per_item,
        settings=dict(settings or {}),
    )
