"""Scoring for the active task-proposal benchmark.

Each annotated snapshot is either negative (tidy: the right answer is no
proposal) or carries gold tasks.  A judge scores every gold task 0, 0.5 or 1
against the snapshot's predicted proposals; category accuracy is the score
sum over that category's gold tasks divided by their count.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional, Protocol

from .errors import AdapterError, JudgeContractError, ValidationError
from .remote import post_json

BENCH_CATEGORIES = ("clean_debris", "organize_item", "safety_check")
JUDGE_SCORES = (0, 0.5, 1)


class Judge(Protocol):
    def score(self, gold: dict, predictions: list) -> float: ...


def normalize(text: str) -> str:
    return " ".join(re.findall(r"[a-z0-9]+", text.lower()))


def _pred_text(p) -> tuple[Optional[str], str]:
    if isinstance(p, dict):
        return p.get("category"), str(p.get("description", ""))
    return None, str(p)


class ExactJudge:
    """1 for a normalized exact match, 0.5 when one text contains the other, else 0.

    A prediction carrying a category only counts for gold tasks of that category.
    """

    def score(self, gold: dict, predictions: list) -> float:
        want = normalize(gold["description"])
        best = 0.0
        for p in predictions:
            cat, text = _pred_text(p)
            if cat is not None and cat != gold["category"]:
                continue
            got = normalize(text)
            if not got:
                continue
            if got == want:
                return 1.0
            if want and (want in got or got in want):
                best = 0.5
        return best


class RemoteJudge:
    """LLM judge over HTTP: {gold, predictions} in, {score} out."""

    def __init__(self, url: str, timeout: float = 60.0):
        self.url, self.timeout = url, timeout

    def score(self, gold: dict, predictions: list) -> float:
        try:
            reply = post_json(self.url, {"gold": gold, "predictions": predictions}, self.timeout)
        except AdapterError as exc:
            raise JudgeContractError(str(exc)) from None
        if "score" not in reply:
            raise JudgeContractError("judge reply lacks a score")
        return reply["score"]


def positive_average(clean_debris, organize_item, safety_check):
    """Unweighted mean of the three category accuracies (works on floats or Fractions)."""
    return (clean_debris + organize_item + safety_check) / 3


def overall_accuracy(positive, negative):
    return (positive + negative) / 2


@dataclass(frozen=True)
class BenchResult:
    clean_debris: float
    organize_item: float
    safety_check: float
    positive_average: float
    negative_accuracy: float
    mean_negative_proposals: float
    overall: float
    counts: tuple = ()  # (category, gold count) pairs plus ("negative", n)

    @classmethod
    def from_rates(cls, clean_debris: float, organize_item: float, safety_check: float,
                   negative_accuracy: float, mean_negative_proposals: float = 0.0,
                   counts: tuple = ()) -> "BenchResult":
        for name, v in (("clean_debris", clean_debris), ("organize_item", organize_item),
                        ("safety_check", safety_check), ("negative_accuracy", negative_accuracy)):
            if not 0.0 <= v <= 1.0:
                raise ValidationError(f"{name}={v} outside [0, 1]")
        pos = positive_average(clean_debris, organize_item, safety_check)
        return cls(clean_debris, organize_item, safety_check, pos, negative_accuracy,
                   mean_negative_proposals, overall_accuracy(pos, negative_accuracy), counts)

    def to_doc(self) -> dict:
        return {
            "clean_debris": self.clean_debris,
            "organize_item": self.organize_item,
            "safety_check": self.safety_check,
            "positive_average": self.positive_average,
            "negative_accuracy": self.negative_accuracy,
            "mean_negative_proposals": self.mean_negative_proposals,
            "overall": self.overall,
            "counts": dict(self.counts),
        }

    def table_row(self) -> str:
        pct = lambda v: f"{100 * v:.2f}%"  # noqa: E731
        return " | ".join([pct(self.clean_debris), pct(self.organize_item), pct(self.safety_check),
                           pct(self.positive_average), f"{self.mean_negative_proposals:.2f}",
                           pct(self.negative_accuracy), pct(self.overall)])


def score_benchmark(predictions: dict, annotations: dict, judge: Optional[Judge] = None) -> BenchResult:
    """``predictions``: snapshot id -> list of proposals (strings or {category, description}).
    ``annotations``: snapshot id -> {"negative": true} or {"gold": [{category, description}]}.
    """
    judge = judge or ExactJudge()
    missing = sorted(set(annotations) - set(predictions))
    extra = sorted(set(predictions) - set(annotations))
    if missing or extra:
        problems = [f"no prediction for {m}" for m in missing] + [f"no annotation for {e}" for e in extra]
        raise ValidationError("prediction and annotation ids do not align", problems)
    sums = {c: 0.0 for c in BENCH_CATEGORIES}
    counts = {c: 0 for c in BENCH_CATEGORIES}
    neg_total = neg_silent = neg_props = 0
    for sid in sorted(annotations):
        ann, preds = annotations[sid], list(predictions[sid])
        if ann.get("negative"):
            neg_total += 1
            neg_props += len(preds)
            neg_silent += not preds
            continue
        for gold in ann.get("gold", []):
            cat = gold["category"]
            if cat not in sums:
                raise ValidationError(f"snapshot {sid}: unknown gold category {cat!r}")
            s = judge.score(gold, preds)
            if isinstance(s, bool) or not isinstance(s, (int, float)) or s not in JUDGE_SCORES:
                raise JudgeContractError(f"judge returned {s!r} for {sid}; expected 0, 0.5 or 1")
            sums[cat] += s
            counts[cat] += 1
    acc = {c: (sums[c] / counts[c] if counts[c] else 0.0) for c in BENCH_CATEGORIES}
    neg_acc = neg_silent / neg_total if neg_total else 0.0
    mean_props = neg_props / neg_total if neg_total else 0.0
    return BenchResult.from_rates(acc["clean_debris"], acc["organize_item"], acc["safety_check"], neg_acc,
                                  mean_props, tuple(sorted(counts.items())) + (("negative", neg_total),))
