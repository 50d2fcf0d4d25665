"""Task records, timer specs and the split task memory.

Live tasks sit in exactly one split: ``pending`` (awaiting planning, status
pending or ready), ``scheduled`` (timer templates), ``interrupted`` or
``executing``.  Terminal tasks leave every split.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Any, Callable, Iterable, Optional

from .errors import CycleError, StateError, UnknownDependencyError, ValidationError

KINDS = ("passive", "active", "scheduled")
CATEGORIES = ("clean_debris", "organize_item", "safety_check", "other")
STATUSES = ("pending", "ready", "executing", "interrupted", "completed", "failed", "cancelled")
TERMINAL = frozenset({"completed", "failed", "cancelled"})
SPLITS = ("pending", "scheduled", "interrupted", "executing")

Sink = Callable[[str, dict], None]


@dataclass
class ScheduleSpec:
    """When a template fires.

    ``at`` fires once at an absolute tick, ``after`` once at
    registration + delay, ``every`` at start, start+period, ... up to ``end``.
    """

    mode: str
    tick: int = 0  # absolute tick for "at", delay for "after"
    period: int = 0
    end: Optional[int] = None
    start: Optional[int] = None
    registered_at: int = 0
    last_fired: Optional[int] = None
    fired: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("at", "after", "every"):
            raise ValidationError(f"unknown schedule mode {self.mode!r}")
        if self.mode == "every" and self.period < 1:
            raise ValidationError("schedule period must be >= 1")
        if self.mode in ("at", "after") and self.tick < 0:
            raise ValidationError("schedule tick must be >= 0")

    @classmethod
    def at(cls, tick: int) -> "ScheduleSpec":
        return cls("at", tick=tick)

    @classmethod
    def after(cls, delay: int) -> "ScheduleSpec":
        return cls("after", tick=delay)

    @classmethod
    def every(cls, period: int, end: Optional[int] = None, start: Optional[int] = None) -> "ScheduleSpec":
        return cls("every", period=period, end=end, start=start)

    @classmethod
    def from_doc(cls, doc: dict) -> "ScheduleSpec":
        if "at" in doc:
            return cls.at(int(doc["at"]))
        if "after" in doc:
            return cls.after(int(doc["after"]))
        if "every" in doc:
            return cls.every(int(doc["every"]), doc.get("end"), doc.get("start"))
        raise ValidationError("schedule needs one of at/after/every")

    def to_doc(self) -> dict:
        if self.mode == "at":
            return {"at": self.tick}
        if self.mode == "after":
            return {"after": self.tick}
        doc: dict[str, Any] = {"every": self.period}
        if self.start is not None:
            doc["start"] = self.start
        if self.end is not None:
            doc["end"] = self.end
        return doc

    def next_due(self) -> Optional[int]:
        """Due tick of the next firing, or None once exhausted."""
        if self.mode == "at":
            return None if self.fired else self.tick
        if self.mode == "after":
            return None if self.fired else self.registered_at + self.tick
        first = self.registered_at if self.start is None else self.start
        due = first + self.fired * self.period
        if self.end is not None and due > self.end:
            return None
        return due


@dataclass(frozen=True)
class Step:
    """One tool invocation inside a task plan.

    ``until`` is the perceivable predicate that marks the step done; ``when``
    is an optional guard checked when the step becomes current (false skips it).
    """

    tool: str
    op: str
    args: tuple = ()  # sorted (name, value) pairs
    until: Any = None
    when: Any = None

    @property
    def argmap(self) -> dict:
        return dict(self.args)

    def key(self, index: int) -> str:
        return f"{index}:{self.tool}.{self.op}"


@dataclass
class TaskRecord:
    id: str
    kind: str
    description: str
    situation: str = ""
    category: str = "other"
    priority: Optional[int] = None
    deps: frozenset = frozenset()
    status: str = "pending"
    created_at: int = 0
    schedule: Optional[ScheduleSpec] = None
    interruptible: bool = True
    resume_context: list = field(default_factory=list)
    postcondition: Any = None
    deadline_ticks: Optional[int] = None
    label: str = ""
    steps: tuple = ()
    resources: frozenset = frozenset()
    serial: int = 0
    template_id: Optional[str] = None
    finished_at: Optional[int] = None
    exec_ticks: int = 0
    priority_pinned: bool = False

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValidationError(f"unknown task kind {self.kind!r}")
        if self.category not in CATEGORIES:
            raise ValidationError(f"unknown task category {self.category!r}")
        if self.status not in STATUSES:
            raise ValidationError(f"unknown task status {self.status!r}")
        if self.priority is not None and not 0 <= self.priority <= 100:
            raise ValidationError(f"priority {self.priority} outside [0, 100]")
        self.deps = frozenset(self.deps)
        self.resources = frozenset(self.resources)

    @property
    def terminal(self) -> bool:
        return self.status in TERMINAL

    @property
    def is_template(self) -> bool:
        return self.schedule is not None

    def sort_key(self) -> tuple:
        p = -1 if self.priority is None else self.priority
        return (-p, self.created_at, self.serial)

    def brief(self) -> dict:
        return {"task_id": self.id, "label": self.label}


@dataclass(frozen=True)
class MemorySnapshot:
    splits: dict
    counts: dict
    time: int = 0

    def ids(self, split: str) -> list[str]:
        return [t.id for t in self.splits[split]]

    def records(self) -> list[dict]:
        out = []
        for split in SPLITS:
            for t in self.splits[split]:
                out.append(
                    {
                        "split": split,
                        "id": t.id,
                        "kind": t.kind,
                        "label": t.label,
                        "status": t.status,
                        "priority": t.priority,
                        "deps": sorted(t.deps),
                        "created_at": t.created_at,
                        "resume_context": list(t.resume_context),
                    }
                )
        return out


def _frozen_copy(t: TaskRecord) -> TaskRecord:
    c = copy.copy(t)
    c.resume_context = list(t.resume_context)
    if t.schedule is not None:
        c.schedule = copy.copy(t.schedule)
    return c


class TaskMemory:
    """Owns every TaskRecord of a run.

    ``sink(kind, payload)`` receives lifecycle events (interrupt, resume,
    terminal outcomes); instruction/proposal/timer events are emitted by the
    caller that created the record.
    """

    def __init__(self, sink: Optional[Sink] = None):
        self.tasks: dict[str, TaskRecord] = {}
        self._splits: dict[str, dict[str, None]] = {s: {} for s in SPLITS}
        self._where: dict[str, str] = {}
        self._dependents: dict[str, set[str]] = {}
        self._serial = 0
        self._sink = sink
        self.created = 0
        self.last_fired: list[tuple[str, int]] = []

    # -- helpers ---------------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> None:
        if self._sink is not None:
            self._sink(kind, payload)

    def _move(self, task_id: str, split: Optional[str]) -> None:
        old = self._where.pop(task_id, None)
        if old is not None:
            del self._splits[old][task_id]
        if split is not None:
            self._splits[split][task_id] = None
            self._where[task_id] = split

    def split_of(self, task_id: str) -> Optional[str]:
        return self._where.get(task_id)

    def split(self, name: str) -> list[TaskRecord]:
        return [self.tasks[i] for i in self._splits[name]]

    def get(self, task_id: str) -> TaskRecord:
        try:
            return self.tasks[task_id]
        except KeyError:
            raise StateError(f"unknown task {task_id!r}") from None

    def live(self) -> list[TaskRecord]:
        return [self.tasks[i] for s in SPLITS for i in self._splits[s]]

    def _find_path(self, start: str, goal: str) -> Optional[list[str]]:
        """Dependency path start -> ... -> goal (following deps), or None."""
        stack = [(start, [start])]
        seen = set()
        while stack:
            node, path = stack.pop()
            if node == goal:
                return path
            if node in seen:
                continue
            seen.add(node)
            for d in sorted(self.tasks[node].deps, reverse=True):
                stack.append((d, path + [d]))
        return None

    # -- operations ------------------------------------------------------------

    def insert_task(self, record: TaskRecord) -> str:
        if record.id in self.tasks:
            raise ValidationError(f"duplicate task id {record.id!r}")
        if record.id in record.deps:
            raise CycleError([record.id, record.id])
        unknown = sorted(d for d in record.deps if d not in self.tasks)
        if unknown:
            raise UnknownDependencyError(f"unknown dependency ids {unknown}")
        self._serial += 1
        record.serial = self._serial
        self.tasks[record.id] = record
        self.created += 1
        for d in record.deps:
            self._dependents.setdefault(d, set()).add(record.id)
        if record.is_template:
            record.schedule.registered_at = record.created_at
            self._move(record.id, "scheduled")
        else:
            self._move(record.id, "pending")
        return record.id

    def add_dependency(self, task_id: str, dep_id: str) -> None:
        """Make ``task_id`` wait on ``dep_id``; refuses edges that close a cycle."""
        task = self.get(task_id)
        if dep_id not in self.tasks:
            raise UnknownDependencyError(f"unknown dependency id {dep_id!r}")
        if dep_id in task.deps:
            return
        path = [task_id, task_id] if dep_id == task_id else self._find_path(dep_id, task_id)
        if path is not None:
            raise CycleError(path if dep_id == task_id else [task_id] + path)
        task.deps = task.deps | {dep_id}
        self._dependents.setdefault(dep_id, set()).add(task_id)
        if self.tasks[dep_id].status in ("failed", "cancelled") and not task.terminal:
            self.finalize(task_id, "cancelled", now=self.tasks[dep_id].finished_at or 0,
                          reason=f"dependency {dep_id} {self.tasks[dep_id].status}")

    def trigger_scheduled(self, now: int) -> list[str]:
        """Instantiate every due firing of every template; returns new task ids."""
        fired = []
        for template in self.split("scheduled"):
            spec = template.schedule
            due = spec.next_due()
            while due is not None and due <= now:
                spec.fired += 1
                spec.last_fired = due
                inst = replace(
                    template,
                    id=f"{template.id}.{spec.fired}",
                    kind="scheduled",
                    schedule=None,
                    status="ready",
                    created_at=now,
                    priority=template.priority if template.priority_pinned else None,
                    deps=frozenset(),
                    resume_context=[],
                    template_id=template.id,
                    finished_at=None,
                    exec_ticks=0,
                )
                self.insert_task(inst)
                fired.append((inst.id, due))
                due = spec.next_due()
            if due is None:
                self.finalize(template.id, "completed", now=now, reason="schedule exhausted", quiet=True)
        self.last_fired = fired
        return [i for i, _ in fired]

    def _ancestors_completed(self, task: TaskRecord) -> bool:
        stack, seen = list(task.deps), set()
        while stack:
            d = stack.pop()
            if d in seen:
                continue
            seen.add(d)
            dep = self.tasks[d]
            if dep.status != "completed":
                return False
            stack.extend(dep.deps)
        return True

    def executable_set(self, now: int = 0) -> list[TaskRecord]:
        """Pending and interrupted tasks whose every ancestor has completed."""
        out = []
        for split in ("pending", "interrupted"):
            for tid in self._splits[split]:
                t = self.tasks[tid]
                if self._ancestors_completed(t):
                    out.append(t)
        out.sort(key=TaskRecord.sort_key)
        return out

    def mark_executing(self, task_id: str) -> list[str]:
        """Dispatch a pending/ready task or resume an interrupted one.

        Returns the resume context (empty for fresh dispatches).
        """
        task = self.get(task_id)
        if task.status not in ("pending", "ready", "interrupted"):
            raise StateError(f"cannot dispatch task {task_id} in status {task.status}")
        resumed = task.status == "interrupted"
        task.status = "executing"
        self._move(task_id, "executing")
        if resumed:
            self._emit("task_resumed", {**task.brief(), "resume_context": list(task.resume_context)})
        return list(task.resume_context)

    def mark_interrupted(self, task_id: str, resume_context: Iterable[str]) -> None:
        task = self.get(task_id)
        if task.status != "executing":
            raise StateError(f"cannot interrupt task {task_id} in status {task.status}")
        if not task.interruptible:
            raise StateError(f"task {task_id} is not interruptible")
        task.status = "interrupted"
        task.resume_context = list(resume_context)
        self._move(task_id, "interrupted")
        self._emit("task_interrupted", {**task.brief(), "resume_context": list(task.resume_context)})

    def finalize(self, task_id: str, outcome: str, now: int = 0, reason: str = "", quiet: bool = False) -> None:
        if outcome not in TERMINAL:
            raise ValidationError(f"not a terminal outcome: {outcome!r}")
        task = self.get(task_id)
        if task.terminal:
            raise StateError(f"task {task_id} already {task.status}")
        task.status = outcome
        task.finished_at = now
        task.resume_context = []
        self._move(task_id, None)
        if not quiet:
            kind = "task_completed" if outcome == "completed" else "task_failed"
            payload = {**task.brief(), "outcome": outcome}
            if reason:
                payload["reason"] = reason
            self._emit(kind, payload)
        if outcome != "completed":
            for dep in sorted(self._dependents.get(task_id, ())):
                if not self.tasks[dep].terminal:
                    self.finalize(dep, "cancelled", now=now, reason=f"dependency {task_id} {outcome}")

    # -- views -----------------------------------------------------------------

    def counts(self) -> dict:
        c = {s: 0 for s in STATUSES}
        for t in self.tasks.values():
            c[t.status] += 1
        live = sum(len(v) for v in self._splits.values())
        return {
            "created": self.created,
            "live": live,
            "completed": c["completed"],
            "failed": c["failed"],
            "cancelled": c["cancelled"],
            "by_status": c,
        }

    def snapshot(self, now: int = 0) -> MemorySnapshot:
        splits = {s: tuple(_frozen_copy(self.tasks[i]) for i in self._splits[s]) for s in SPLITS}
        return MemorySnapshot(splits=splits, counts=self.counts(), time=now)
