"""Batch runs, metrics, and golden milestone comparison."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .runtime import RuntimeEvent, Trace
from .scenario import Scenario

_MISSING = object()


def lookup(payload: Any, path: str) -> Any:
    """Dotted-path access into nested dicts.

    A numeric part indexes a list; any other part applied to a list is looked
    up in every element and the hits come back as a list.
    """
    cur = payload
    parts = path.split(".")
    for i, part in enumerate(parts):
        if isinstance(cur, dict) and part in cur:
            cur = cur[part]
        elif isinstance(cur, list) and part.isdigit() and int(part) < len(cur):
            cur = cur[int(part)]
        elif isinstance(cur, list):
            rest = ".".join(parts[i:])
            hits = [h for h in (lookup(x, rest) for x in cur) if h is not _MISSING]
            return hits if hits else _MISSING
        else:
            return _MISSING
    return cur


def _contains(got: Any, want: Any) -> bool:
    """Equality, except that a list payload matches when any element equals ``want``."""
    if got == want:
        return True
    if isinstance(got, list) and not isinstance(want, list):
        return any(_contains(g, want) for g in got)
    if isinstance(got, list) and isinstance(want, dict):
        return any(_contains(g, want) for g in got)
    if isinstance(got, dict) and isinstance(want, dict):
        return all(k in got and _contains(got[k], v) for k, v in want.items())
    return False


@dataclass(frozen=True)
class Milestone:
    kind: str
    match: tuple = ()  # sorted (dotted path, expected value) pairs
    steps: tuple = ()
    note: str = ""

    @classmethod
    def from_doc(cls, doc: dict) -> "Milestone":
        step = doc.get("step", ())
        steps = tuple(step) if isinstance(step, list) else ((step,) if step else ())
        return cls(doc["kind"], tuple(sorted(doc.get("match", {}).items(), key=lambda kv: kv[0])),
                   steps, doc.get("note", ""))

    def matches(self, event: RuntimeEvent) -> bool:
        if event.kind != self.kind:
            return False
        for path, want in self.match:
            got = lookup(event.payload, path)
            if got is _MISSING or not _contains(got, want):
                return False
        return True

    def describe(self) -> str:
        conds = ", ".join(f"{p}={v!r}" for p, v in self.match)
        return f"{self.kind}({conds})"


@dataclass(frozen=True)
class GoldenVerdict:
    matched: bool
    matched_count: int = 0
    positions: tuple = ()  # event seq numbers of matched milestones
    failed: Optional[Milestone] = None
    nearest: Optional[RuntimeEvent] = None

    def report(self) -> str:
        if self.matched:
            return f"matched {self.matched_count} milestones"
        near = self.nearest.to_line() if self.nearest is not None else "none"
        return (f"diverged at milestone {self.matched_count + 1}: {self.failed.describe()}; "
                f"nearest candidate: {near}")


def compare_golden(trace: Trace | Iterable[RuntimeEvent], milestones: Iterable) -> GoldenVerdict:
    """In-order subsequence match of milestones against the trace.

    When milestone i cannot be found but does occur before the event matched
    by an earlier milestone j, the pair is out of order and the divergence is
    reported at j, the first of the swapped labels.
    """
    events = list(trace.events if isinstance(trace, Trace) else trace)
    ms = [m if isinstance(m, Milestone) else Milestone.from_doc(m) for m in milestones]
    pos = 0
    idx: list[int] = []
    for i, m in enumerate(ms):
        j = pos
        while j < len(events) and not m.matches(events[j]):
            j += 1
        if j < len(events):
            idx.append(j)
            pos = j + 1
            continue
        for k in range(i):
            lower = idx[k - 1] + 1 if k else 0
            early = next((x for x in range(lower, idx[k]) if m.matches(events[x])), None)
            if early is not None:
                return GoldenVerdict(False, k, tuple(events[x].seq for x in idx[:k]), ms[k], events[early])
        same_kind = [e for e in events[pos:] if e.kind == m.kind] or [e for e in events if e.kind == m.kind]
        return GoldenVerdict(False, i, tuple(events[x].seq for x in idx), m, same_kind[0] if same_kind else None)
    return GoldenVerdict(True, len(ms), tuple(events[x].seq for x in idx))


@dataclass
class MetricsReport:
    ticks: int = 0
    events: int = 0
    tasks_created: int = 0
    tasks_completed: int = 0
    tasks_failed: int = 0
    tasks_cancelled: int = 0
    active_tasks: int = 0
    proposals: int = 0
    interruptions: int = 0
    resumptions: int = 0
    commands_issued: int = 0
    commands_rejected: int = 0
    captions: int = 0
    history_size: int = 0
    golden: Optional[str] = None
    golden_matched: Optional[bool] = None
    extra: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if k != "extra"} | self.extra


def metrics_for(rt, trace: Trace) -> MetricsReport:
    counts = {}
    for e in trace.events:
        counts[e.kind] = counts.get(e.kind, 0) + 1
    c = rt.mem.counts()
    return MetricsReport(
        ticks=rt.clock,
        events=len(trace),
        tasks_created=c["created"],
        tasks_completed=c["completed"],
        tasks_failed=c["failed"],
        tasks_cancelled=c["cancelled"],
        active_tasks=sum(1 for t in rt.mem.tasks.values() if t.kind == "active"),
        proposals=counts.get("proposal_emitted", 0),
        interruptions=counts.get("task_interrupted", 0),
        resumptions=counts.get("task_resumed", 0),
        commands_issued=counts.get("command_issued", 0),
        commands_rejected=counts.get("command_rejected", 0),
        captions=counts.get("caption_recorded", 0),
        history_size=len(rt.history),
    )


def execute(scenario: Scenario | dict, seed: Optional[int] = None):
    """Run to the horizon (or quiescence when the scenario asks); returns (trace, metrics, runtime)."""
    sc = scenario if isinstance(scenario, Scenario) else Scenario.from_doc(scenario)
    rt = sc.build_runtime(seed)
    rt.run(sc.horizon, bool(sc.doc.get("stop_at_quiescence", False)))
    trace = rt.halt()
    report = metrics_for(rt, trace)
    if sc.golden:
        verdict = compare_golden(trace, sc.golden)
        report.golden = verdict.report()
        report.golden_matched = verdict.matched
    return trace, report, rt


def run_scenario(scenario: Scenario | dict, seed: Optional[int] = None) -> tuple[Trace, MetricsReport]:
    trace, report, _ = execute(scenario, seed)
    return trace, report
