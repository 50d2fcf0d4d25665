"""Frame ingestion, two-tier visual memory, captioning and task proposals."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

from .errors import AdapterError, SequencingError, ValidationError
from .memory import ROBOT, EventHistory, EventRecord, Observation, SceneGraph, SceneGraphDelta
from .predicates import Predicate, UnknownObjectError, fill
from .tasks import TERMINAL, TaskRecord

PROPOSAL_CATEGORIES = ("clean_debris", "organize_item", "safety_check", "other")


@dataclass(frozen=True)
class Frame:
    frame_index: int
    time: int
    camera_id: str = "main"
    observations: tuple = ()
    rooms: tuple = ()  # rooms fully covered by this frame
    audio: tuple = ()  # (tick, source, arg, text) outputs heard during this tick


@dataclass(frozen=True)
class Proposal:
    category: str
    description: str
    situation: str
    frame_index: int
    label: str = ""
    plan: Optional[dict] = None  # steps / postcondition / deadline for the task

    def __post_init__(self) -> None:
        if self.category not in PROPOSAL_CATEGORIES:
            raise ValidationError(f"unknown proposal category {self.category!r}")


@dataclass
class PerceptionConfig:
    short_capacity: int = 30
    long_capacity: int = 100
    thin_modulus: int = 10
    caption_batch: int = 5
    caption_retries: int = 3
    dedupe_ttl: int = 300

    def __post_init__(self) -> None:
        for name in ("short_capacity", "long_capacity", "thin_modulus", "caption_batch"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.caption_retries < 0:
            raise ValidationError("caption_retries must be >= 0")


class VisualMemory:
    def __init__(self, short_capacity: int = 30, long_capacity: int = 100, thin_modulus: int = 10):
        self.short_capacity = short_capacity
        self.long_capacity = long_capacity
        self.k = thin_modulus
        self.short_term: deque[Frame] = deque()
        self.long_term: deque[Frame] = deque()

    def push(self, frame: Frame) -> list[Frame]:
        """Append; returns the frames evicted from short-term, oldest first."""
        self.short_term.append(frame)
        evicted = []
        while len(self.short_term) > self.short_capacity:
            old = self.short_term.popleft()
            evicted.append(old)
            if old.frame_index % self.k == 0:
                self.long_term.append(old)
                while len(self.long_term) > self.long_capacity:
                    self.long_term.popleft()
        return evicted

    def indices(self) -> tuple[list[int], list[int]]:
        return [f.frame_index for f in self.short_term], [f.frame_index for f in self.long_term]


class Captioner(Protocol):
    def caption(self, frames: Sequence[Frame]) -> str: ...


class Proposer(Protocol):
    def propose(self, window: Sequence[Frame], context: str = "") -> list[Proposal]: ...

    def scene_elements(self, frame: Frame) -> list[Observation]: ...


def describe_frame(frame: Frame) -> str:
    robot = next((o for o in frame.observations if o.object_id == ROBOT), None)
    parts = []
    if robot is not None:
        pose = dict(robot.attrs).get("pose")
        parts.append(f"robot in {robot.room}" + (f" at {pose}" if pose else ""))
    for room in frame.rooms:
        seen = []
        for o in frame.observations:
            if o.room != room or o.object_id == ROBOT:
                continue
            bit = o.object_id
            if o.position:
                bit += f" {o.position[0]} {o.position[1]}"
            flags = [f"{k}={v}" for k, v in o.attrs if k in ("power", "level", "knocked_over", "photographed")]
            if flags:
                bit += " (" + ", ".join(flags) + ")"
            seen.append(bit)
        parts.append(f"{room}: " + (", ".join(seen) if seen else "nothing"))
    for _tick, source, _arg, text in frame.audio:
        parts.append(f"{source} said '{text}'")
    return "; ".join(parts)


class ScriptedCaptioner:
    """Deterministic captions built from the newest frame of each batch.

    ``failures`` maps a batch's first frame index to how many attempts on that
    batch should raise before succeeding (for exercising the retry path).
    """

    def __init__(self, failures: Optional[dict] = None):
        self.failures = {int(k): int(v) for k, v in (failures or {}).items()}
        self._attempts: dict[int, int] = {}

    def caption(self, frames: Sequence[Frame]) -> str:
        first = frames[0].frame_index
        n = self._attempts.get(first, 0)
        self._attempts[first] = n + 1
        if n < self.failures.get(first, 0):
            raise AdapterError(f"captioner unavailable for frame {first}")
        return describe_frame(frames[-1])


@dataclass(frozen=True)
class ProposalRule:
    """Pattern over one observation that yields a proposal.

    ``match`` keys: ``class`` (object class), ``attrs`` (subset that must
    agree), ``relation`` (relation the object must stand in), and
    ``support_class`` (one class or a list).  Plan fields may use {object},
    {support}, {room}.
    """

    category: str
    description: str
    match: dict
    label: str = ""
    steps: tuple = ()
    postcondition: Optional[dict] = None
    deadline: Optional[int] = None

    @classmethod
    def from_doc(cls, doc: dict) -> "ProposalRule":
        if doc["category"] not in PROPOSAL_CATEGORIES:
            raise ValidationError(f"unknown proposal category {doc['category']!r}")
        return cls(doc["category"], doc["description"], dict(doc["match"]), doc.get("label", ""),
                   tuple(doc.get("steps", [])), doc.get("postcondition"), doc.get("deadline"))

    def matches(self, obs: Observation, classes: dict) -> bool:
        m = self.match
        if "class" in m and obs.cls != m["class"]:
            return False
        attrs = dict(obs.attrs)
        for k, v in m.get("attrs", {}).items():
            if attrs.get(k) != v:
                return False
        if "relation" in m:
            if not obs.position or obs.position[0] != m["relation"]:
                return False
        if "support_class" in m:
            allowed = m["support_class"]
            allowed = [allowed] if isinstance(allowed, str) else allowed
            if not obs.position or classes.get(obs.position[1]) not in allowed:
                return False
        return True


class ScriptedPerceiver:
    """Rule-based proposer over the newest frame; symbolic frames pass through as scene elements."""

    def __init__(self, rules: Iterable[ProposalRule] = ()):
        self.rules = list(rules)

    def scene_elements(self, frame: Frame) -> list[Observation]:
        return list(frame.observations)

    def propose(self, window: Sequence[Frame], context: str = "") -> list[Proposal]:
        if not window or not self.rules:
            return []
        frame = window[-1]
        classes = {o.object_id: o.cls for o in frame.observations}
        out = []
        for obs in frame.observations:
            if obs.object_id == ROBOT:
                continue
            for rule in self.rules:
                if not rule.matches(obs, classes):
                    continue
                support = obs.position[1] if obs.position else ""
                where = classes.get(support, "").replace("_", " ")
                situation = f"{obs.room} {where}".strip()
                mapping = {"object": obs.object_id, "support": support, "room": obs.room}
                plan = {
                    "steps": fill(list(rule.steps), mapping),
                    "postcondition": fill(rule.postcondition, mapping),
                    "deadline": rule.deadline,
                }
                out.append(Proposal(rule.category, fill(rule.description, mapping), situation,
                                    frame.frame_index, rule.label, plan))
        return out


@dataclass
class TickResult:
    delta: SceneGraphDelta
    proposals: list
    evicted: list
    records: list


@dataclass
class _Batch:
    frames: list
    attempts: int = 0


class PerceptionModule:
    """Owns visual memory and writes the scene graph and the event history.

    It doubles as the agent's world view for predicates: ``graph`` plus the
    outputs ``heard`` so far.
    """

    def __init__(self, graph: SceneGraph, history: EventHistory,
                 proposer: Optional[Proposer] = None, captioner: Optional[Captioner] = None,
                 config: Optional[PerceptionConfig] = None):
        self.config = config or PerceptionConfig()
        c = self.config
        self.memory = VisualMemory(c.short_capacity, c.long_capacity, c.thin_modulus)
        self.graph = graph
        self.history = history
        self.proposer = proposer or ScriptedPerceiver()
        self.captioner = captioner or ScriptedCaptioner()
        self.heard: list[tuple] = []
        self.staged: list[Frame] = []
        self.retry: deque[_Batch] = deque()
        self.urgent_frames: set[int] = set()
        self.last_index = 0
        self.placeholders = 0
        self._captioned: set[int] = set()

    # -- ingestion ---------------------------------------------------------------

    def mark_urgent(self, frame_index: int) -> None:
        self.urgent_frames.add(frame_index)

    def ingest_frame(self, frame: Frame, context: str = "") -> TickResult:
        if frame.frame_index != self.last_index + 1:
            raise SequencingError(f"frame {frame.frame_index} after {self.last_index}")
        self.last_index = frame.frame_index
        evicted = self.memory.push(frame)
        self.staged.extend(evicted)
        records = self.evict_and_downsample()
        delta = self.graph.apply_delta(self.proposer.scene_elements(frame), frame.rooms)
        self.heard.extend(frame.audio)
        proposals = self.proposer.propose(list(self.memory.short_term), context)
        return TickResult(delta, proposals, evicted, records)

    def evict_and_downsample(self) -> list[EventRecord]:
        """Caption pending evictions: retried batches first, then full new batches."""
        out = []
        for _ in range(len(self.retry)):
            batch = self.retry.popleft()
            rec = self._caption(batch)
            if rec is not None:
                out.append(rec)
        c = self.config.caption_batch
        while len(self.staged) >= c:
            batch = _Batch(self.staged[:c])
            del self.staged[:c]
            rec = self._caption(batch)
            if rec is not None:
                out.append(rec)
        return out

    def flush(self) -> list[EventRecord]:
        """Caption a trailing partial batch (used at shutdown)."""
        out = self.evict_and_downsample()
        if self.staged:
            batch = _Batch(self.staged)
            self.staged = []
            rec = self._caption(batch)
            if rec is not None:
                out.append(rec)
        return out

    def _caption(self, batch: _Batch) -> Optional[EventRecord]:
        frames = batch.frames
        try:
            text = self.captioner.caption(frames)
            if not isinstance(text, str) or not text.strip():
                raise AdapterError("empty caption")
        except AdapterError:
            batch.attempts += 1
            if batch.attempts <= self.config.caption_retries:
                self.retry.append(batch)
                return None
            self.placeholders += 1
            text = f"caption lost for frames {frames[0].frame_index}-{frames[-1].frame_index}"
        urgent = any(f.frame_index in self.urgent_frames for f in frames)
        for f in frames:
            self.urgent_frames.discard(f.frame_index)
            self._captioned.add(f.frame_index)
        return self.history.append(frames[0].time, frames[-1].time, text, urgent, "caption_eviction")

    # -- coverage ---------------------------------------------------------------

    def retained(self) -> set[int]:
        """Frame indices held in a tier or awaiting their caption."""
        out = {f.frame_index for f in self.memory.short_term}
        out |= {f.frame_index for f in self.memory.long_term}
        out |= {f.frame_index for f in self.staged}
        for b in self.retry:
            out |= {f.frame_index for f in b.frames}
        return out

    def captioned(self) -> set[int]:
        """Frame indices covered by a recorded caption (placeholders included)."""
        return set(self._captioned)

    # -- completion and dedupe --------------------------------------------------

    def check_completion(self, task: TaskRecord, now: int = 0, since: int = -1) -> tuple[str, str]:
        """(verdict, diagnostic) with verdict in completed / failed / still_running."""
        pred = task.postcondition
        if pred is not None:
            try:
                if Predicate.parse(pred).evaluate(self, since=since):
                    return "completed", ""
            except UnknownObjectError as exc:
                return "failed", f"unknown object: {exc}"
        elif task.status == "executing":
            return "completed", ""
        limit = task.deadline_ticks
        if limit is not None and task.exec_ticks > limit:
            return "failed", f"deadline {limit} exceeded"
        return "still_running", ""

    def dedupe_proposal(self, p: Proposal, tasks: Iterable[TaskRecord], now: int = 0) -> bool:
        ttl = self.config.dedupe_ttl
        for t in tasks:
            if t.kind != "active" or t.category != p.category or t.situation != p.situation:
                continue
            if t.status not in TERMINAL:
                return True
            if t.finished_at is not None and now - t.finished_at < ttl:
                return True
        return False
