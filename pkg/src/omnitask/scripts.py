"""Instruction interpretation: turning user text into task plans.

The reference interpreter matches authored scripts by substring; the first
script whose ``match`` occurs in the lower-cased instruction wins.
Unmatched instructions get a spoken acknowledgement.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

from .errors import ValidationError
from .predicates import Predicate, fill
from .tasks import CATEGORIES, ScheduleSpec, Step


@dataclass(frozen=True)
class TaskScript:
    match: str
    label: str
    category: str = "other"
    steps: tuple = ()
    postcondition: Optional[dict] = None
    schedule: Optional[dict] = None
    resources: Optional[tuple] = None
    interruptible: bool = True
    deadline: Optional[int] = None
    depends_on: tuple = ()

    @classmethod
    def from_doc(cls, doc: dict) -> "TaskScript":
        cat = doc.get("category", "other")
        if cat not in CATEGORIES:
            raise ValidationError(f"script {doc.get('label')!r}: unknown category {cat!r}")
        res = doc.get("resources")
        return cls(doc["match"].lower(), doc["label"], cat, tuple(doc.get("steps", [])),
                   doc.get("postcondition"), doc.get("schedule"),
                   tuple(res) if res is not None else None,
                   bool(doc.get("interruptible", True)), doc.get("deadline"),
                   tuple(doc.get("depends_on", [])))


ACK_SCRIPT = TaskScript(
    match="",
    label="reply",
    steps=({"tool": "speaker", "op": "say", "args": {"text": "Noted: {text}"}},),
)


class InstructionInterpreter:
    def __init__(self, scripts: Iterable[TaskScript] = ()):
        self.scripts = list(scripts)

    def interpret(self, text: str) -> TaskScript:
        low = text.lower()
        for s in self.scripts:
            if s.match and s.match in low:
                return s
        return ACK_SCRIPT


def build_steps(docs: Iterable[dict], mapping: Optional[dict] = None) -> tuple:
    """Step documents ({tool, op, args, until?, when?}) to Step values."""
    out = []
    for d in docs:
        d = fill(d, mapping) if mapping else d
        until = Predicate.parse(d["until"]) if d.get("until") is not None else None
        when = Predicate.parse(d["when"]) if d.get("when") is not None else None
        out.append(Step(d["tool"], d["op"], tuple(sorted(d.get("args", {}).items())), until, when))
    return tuple(out)


def schedule_of(doc: Optional[dict]) -> Optional[ScheduleSpec]:
    return ScheduleSpec.from_doc(doc) if doc else None
