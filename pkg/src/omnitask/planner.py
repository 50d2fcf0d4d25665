"""Priority evaluation and greedy, preemptive dispatch selection."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Protocol

from .errors import AdapterError, CycleError, UnknownDependencyError, ValidationError
from .memory import ContextBundle, tokens
from .remote import post_json
from .tasks import TaskRecord

EXCLUSIVE_TAGS = frozenset({"body"})


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class PriorityRubric:
    """Deterministic reference scoring on the 0-100 scale."""

    bands: tuple = (("emergency", 80, 100), ("urgent", 60, 79), ("normal", 30, 59), ("background", 0, 29))
    category_scores: tuple = (("safety_check", 85), ("organize_item", 30), ("clean_debris", 30), ("other", 30))
    scheduled_score: int = 55
    passive_score: int = 50
    urgent_passive_score: int = 70
    urgency_cues: tuple = ("now", "immediately", "urgent")
    keyword_floors: tuple = (("fire", 80), ("smoke", 80), ("gas", 80), ("flood", 80), ("injured", 80),
                             ("hurry", 60), ("asap", 60))
    margin: int = 20
    aging: bool = False
    aging_period: int = 100
    reevaluate_on_resume: bool = False
    scale: float = 1.0

    def __post_init__(self) -> None:
        covered = sorted((lo, hi) for _, lo, hi in self.bands)
        expect = 0
        for lo, hi in covered:
            if lo != expect or hi < lo:
                raise ValidationError("priority bands must partition [0, 100]")
            expect = hi + 1
        if expect != 101:
            raise ValidationError("priority bands must partition [0, 100]")
        if self.margin < 0:
            raise ValidationError("preemption margin must be >= 0")
        if self.scale <= 0:
            raise ValidationError("rubric scale must be positive")

    def _scaled(self, x: int) -> int:
        return max(0, min(100, round_half_up(x * self.scale)))

    @property
    def effective_margin(self) -> int:
        return round_half_up(self.margin * self.scale)

    def base(self, task: TaskRecord) -> int:
        words = tokens(task.description)
        if task.kind == "active":
            score = dict(self.category_scores).get(task.category, 30)
        elif task.template_id is not None or task.kind == "scheduled":
            score = self.scheduled_score
        elif words & set(self.urgency_cues):
            score = self.urgent_passive_score
        else:
            score = self.passive_score
        if task.kind == "passive" and task.category == "safety_check":
            score = max(score, dict(self.category_scores)["safety_check"])
        for kw, floor in self.keyword_floors:
            if kw in words:
                score = max(score, floor)
        return score

    def score(self, task: TaskRecord) -> int:
        return self._scaled(self.base(task))

    def band(self, score: int) -> str:
        for name, lo, hi in self.bands:
            if lo <= score <= hi:
                return name
        raise ValidationError(f"score {score} outside every band")

    def ceiling(self, score: int) -> int:
        for _, lo, hi in self.bands:
            if lo <= score <= hi:
                return hi
        return 100

    def aged(self, task: TaskRecord, now: int) -> int:
        p = task.priority if task.priority is not None else 0
        if not self.aging:
            return p
        bonus = max(0, now - task.created_at) // self.aging_period
        return min(p + bonus, self.ceiling(p))

    def scaled(self, factor: float) -> "PriorityRubric":
        return replace(self, scale=self.scale * factor)


@dataclass(frozen=True)
class Evaluation:
    score: int
    after: tuple = ()  # task ids this task must wait on
    rationale: str = ""
    fallback: bool = False


class EvaluatorAdapter(Protocol):
    def evaluate(self, task: TaskRecord, context: ContextBundle, snapshot) -> Evaluation: ...


class RubricEvaluator:
    def __init__(self, rubric: Optional[PriorityRubric] = None):
        self.rubric = rubric or PriorityRubric()

    def evaluate(self, task, context, snapshot) -> Evaluation:
        s = self.rubric.score(task)
        return Evaluation(s, (), f"rubric {self.rubric.band(min(100, s))}")


def _labels_to_ids(labels: Iterable[str], task: TaskRecord, snapshot) -> tuple:
    by_label: dict[str, str] = {}
    for split in snapshot.splits.values():
        for t in split:
            if t.id != task.id and t.label:
                by_label[t.label] = t.id
    return tuple(by_label[lab] for lab in labels if lab in by_label)


class ScriptedEvaluator:
    """Scores and dependency edges looked up by task label.

    ``table`` maps label -> {"score": int, "after": [labels]}; labels not in
    the table fall back to the rubric.
    """

    def __init__(self, table: dict, rubric: Optional[PriorityRubric] = None):
        self.table = dict(table)
        self.rubric = rubric or PriorityRubric()

    def evaluate(self, task, context, snapshot) -> Evaluation:
        entry = self.table.get(task.label)
        if entry is None:
            return RubricEvaluator(self.rubric).evaluate(task, context, snapshot)
        score = entry.get("score", self.rubric.base(task))
        return Evaluation(score, _labels_to_ids(entry.get("after", ()), task, snapshot),
                          f"scripted {task.label}")


class RemoteEvaluator:
    """LLM-backed scoring over HTTP; reply {score, dependency_edges, rationale}."""

    def __init__(self, url: str, timeout: float = 30.0):
        self.url, self.timeout = url, timeout

    def evaluate(self, task, context, snapshot) -> Evaluation:
        doc = {
            "task": {"id": task.id, "kind": task.kind, "description": task.description,
                     "category": task.category, "situation": task.situation, "label": task.label},
            "context": context.to_doc(),
            "tasks": snapshot.records(),
        }
        reply = post_json(self.url, doc, self.timeout)
        score = reply.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise AdapterError("evaluator reply lacks a numeric score")
        edges = reply.get("dependency_edges", [])
        if not isinstance(edges, list) or not all(isinstance(e, str) for e in edges):
            raise AdapterError("dependency_edges must be a list of task ids")
        return Evaluation(round_half_up(score), tuple(edges), str(reply.get("rationale", "")))


def evaluate_priority(evaluator, rubric: PriorityRubric, task: TaskRecord,
                      context: ContextBundle, snapshot) -> Evaluation:
    """Adapter score clamped to [0, 100]; malformed output falls back to the rubric."""
    if task.terminal:
        raise ValidationError(f"task {task.id} is terminal")
    try:
        ev = evaluator.evaluate(task, context, snapshot)
        if not isinstance(ev, Evaluation):
            raise AdapterError("evaluator returned a non-Evaluation")
        score = ev.score
        if not isinstance(score, int) or isinstance(score, bool):
            raise AdapterError("evaluator score is not an integer")
    except AdapterError as exc:
        s = rubric.score(task)
        return Evaluation(min(100, s), (), f"fallback to rubric: {exc}", True)
    return Evaluation(max(0, min(100, score)), ev.after, ev.rationale)


@dataclass
class PlanDecision:
    dispatch: list = field(default_factory=list)  # task ids, fresh and resumed
    resumed: list = field(default_factory=list)
    preempted: list = field(default_factory=list)  # (task id, preempting task id)
    rationale: list = field(default_factory=list)
    decided_at: int = 0

    @property
    def empty(self) -> bool:
        return not self.dispatch and not self.preempted


class Planner:
    def __init__(self, rubric: Optional[PriorityRubric] = None, exclusive: Iterable[str] = EXCLUSIVE_TAGS):
        self.rubric = rubric or PriorityRubric()
        self.exclusive = frozenset(exclusive)

    def _order(self, tasks: Iterable[TaskRecord], now: int) -> list[TaskRecord]:
        return sorted(tasks, key=lambda t: (-self.rubric.aged(t, now), t.created_at, t.serial))

    def plan(self, executable: Iterable[TaskRecord], executing: Iterable[TaskRecord],
             now: int = 0, allow_preempt: bool = True) -> PlanDecision:
        """Greedy pick in priority order; preempt an exclusive holder only across the margin."""
        d = PlanDecision(decided_at=now)
        margin = self.rubric.effective_margin
        holders: dict[str, TaskRecord] = {}
        for t in executing:
            for tag in t.resources & self.exclusive:
                holders[tag] = t
        taken: set = set()
        for c in self._order(executable, now):
            need = c.resources & self.exclusive
            if need & taken:
                continue
            blockers = {holders[tag].id: holders[tag] for tag in need if tag in holders}
            cp = self.rubric.aged(c, now)
            if blockers:
                ok = allow_preempt and all(
                    b.interruptible and cp - self.rubric.aged(b, now) >= margin for b in blockers.values())
                if not ok:
                    continue
                for bid in sorted(blockers):
                    b = blockers[bid]
                    d.preempted.append((bid, c.id))
                    d.rationale.append(f"{c.id}({cp}) preempts {bid}({self.rubric.aged(b, now)})")
                    for tag in b.resources & self.exclusive:
                        holders.pop(tag, None)
            taken |= need
            d.dispatch.append(c.id)
            if c.status == "interrupted":
                d.resumed.append(c.id)
            d.rationale.append(f"dispatch {c.id}({cp})")
        return d

    def resume_pass(self, interrupted: Iterable[TaskRecord], executing: Iterable[TaskRecord],
                    now: int = 0) -> PlanDecision:
        return self.plan([t for t in interrupted if t.status == "interrupted"], executing, now,
                         allow_preempt=False)


def apply_edges(mem, task: TaskRecord, after: Iterable[str]) -> list[str]:
    """Add evaluator-proposed dependency edges; returns notes for rejected ones."""
    notes = []
    for dep in after:
        try:
            mem.add_dependency(task.id, dep)
        except (CycleError, UnknownDependencyError) as exc:
            notes.append(f"edge {task.id}->{dep} rejected: {exc}")
    return notes
