"""Spatial memory (scene graph), event history, retrieval and context assembly."""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional, Protocol, Sequence

from .errors import ValidationError

RELATIONS = ("on", "in", "near", "held_by")
EVENT_SOURCES = ("caption_eviction", "planner_note", "instruction_echo")
ROBOT = "robot"


@dataclass(frozen=True)
class Observation:
    object_id: str
    cls: str
    attrs: tuple = ()  # sorted (key, value) pairs
    room: str = ""
    position: Optional[tuple] = None  # (relation, target id)

    @classmethod
    def make(cls, object_id, klass, attrs=None, room="", position=None) -> "Observation":
        pos = tuple(position) if position else None
        if pos is not None and pos[0] not in RELATIONS:
            raise ValidationError(f"unknown relation {pos[0]!r}")
        return cls(object_id, klass, tuple(sorted((attrs or {}).items())), room, pos)


@dataclass
class Node:
    id: str
    cls: str
    room: str
    attrs: dict = field(default_factory=dict)


@dataclass
class SceneGraphDelta:
    added_nodes: list = field(default_factory=list)
    removed_nodes: list = field(default_factory=list)
    changed_nodes: list = field(default_factory=list)
    added_edges: list = field(default_factory=list)
    removed_edges: list = field(default_factory=list)

    @property
    def empty(self) -> bool:
        return not (self.added_nodes or self.removed_nodes or self.changed_nodes
                    or self.added_edges or self.removed_edges)

    def to_payload(self) -> dict:
        return {
            "added_nodes": sorted(self.added_nodes),
            "removed_nodes": sorted(self.removed_nodes),
            "changed_nodes": sorted(self.changed_nodes),
            "added_edges": [list(e) for e in sorted(self.added_edges)],
            "removed_edges": [list(e) for e in sorted(self.removed_edges)],
        }


class SceneGraph:
    """Believed object layout, updated only from observed rooms."""

    def __init__(self, rooms: Iterable[str]):
        self.rooms = frozenset(rooms)
        self.nodes: dict[str, Node] = {}
        self.edges: set[tuple[str, str, str]] = set()
        self._out: dict[str, set] = {}
        self.robot_room: Optional[str] = None
        self.robot_pose: Optional[str] = None
        self.observed_rooms: set[str] = set()

    def room_of(self, oid: str) -> Optional[str]:
        if oid in self.rooms:
            return oid
        node = self.nodes.get(oid)
        return node.room if node else None

    def _drop_edges(self, edges: Iterable, delta: SceneGraphDelta) -> None:
        for e in list(edges):
            if e in self.edges:
                self.edges.discard(e)
                self._out.get(e[0], set()).discard(e)
                delta.removed_edges.append(e)

    def apply_delta(self, observations: Sequence[Observation], rooms: Iterable[str] = ()) -> SceneGraphDelta:
        """Fold one frame's observations in; returns what changed.

        Rooms are considered observed if listed in ``rooms`` or if any
        observation lies in them; nodes believed to be in an observed room but
        absent from the frame are removed.  Unobserved rooms are left alone.
        """
        observed = set(rooms) | {o.room for o in observations}
        bad = sorted(r for r in observed if r not in self.rooms)
        if bad:
            raise ValidationError(f"observation references unknown rooms {bad}")
        delta = SceneGraphDelta()
        seen: dict[str, Observation] = {}
        for obs in observations:
            seen[obs.object_id] = obs

        for oid, obs in seen.items():
            attrs = dict(obs.attrs)
            if oid == ROBOT:
                self.robot_room = obs.room
                self.robot_pose = attrs.get("pose") or None
            node = self.nodes.get(oid)
            if node is None:
                self.nodes[oid] = Node(oid, obs.cls, obs.room, attrs)
                delta.added_nodes.append(oid)
            elif node.cls != obs.cls or node.room != obs.room or node.attrs != attrs:
                node.cls, node.room, node.attrs = obs.cls, obs.room, attrs
                delta.changed_nodes.append(oid)

        for oid in sorted(self.nodes):
            node = self.nodes[oid]
            if oid not in seen and oid != ROBOT and node.room in observed:
                del self.nodes[oid]
                delta.removed_nodes.append(oid)
                self._drop_edges(self._out.pop(oid, set()), delta)
                self._drop_edges([e for e in self.edges if e[2] == oid], delta)

        for oid, obs in seen.items():
            want = {(oid, obs.position[0], obs.position[1])} if obs.position else set()
            have = self._out.get(oid, set())
            if want == have:
                continue
            self._drop_edges(have - want, delta)
            for e in sorted(want - have):
                self.edges.add(e)
                self._out.setdefault(oid, set()).add(e)
                delta.added_edges.append(e)
        # edges whose target is not (or no longer) a node
        dangling = [e for e in self.edges if e[2] not in self.nodes]
        self._drop_edges(dangling, delta)
        self.observed_rooms |= observed
        return delta

    def edge_set(self) -> set:
        return set(self.edges)

    def dump_lines(self) -> list[str]:
        """Deterministic node-sorted then edge-sorted line records."""
        import json

        lines = []
        for oid in sorted(self.nodes):
            n = self.nodes[oid]
            lines.append(json.dumps({"node": oid, "class": n.cls, "room": n.room,
                                     "attrs": n.attrs}, sort_keys=True))
        for s, r, o in sorted(self.edges):
            lines.append(json.dumps({"edge": [s, r, o]}))
        return lines


@dataclass(frozen=True)
class EventRecord:
    seq: int
    start: int
    end: int
    text: str
    urgent: bool = False
    source: str = "caption_eviction"

    def __post_init__(self) -> None:
        if self.start > self.end:
            raise ValidationError(f"event span {self.start}>{self.end}")
        if not self.text:
            raise ValidationError("event caption must be non-empty")
        if self.source not in EVENT_SOURCES:
            raise ValidationError(f"event source {self.source!r} not allowed in history")

    def render(self) -> str:
        return f"[{self.start}-{self.end}] {self.text}"


_TOKEN = re.compile(r"[a-z0-9]+")


def tokens(text: str) -> frozenset:
    return frozenset(_TOKEN.findall(text.lower()))


def jaccard(a: frozenset, b: frozenset) -> float:
    union = len(a | b)
    return len(a & b) / union if union else 0.0


class EventHistory:
    def __init__(self) -> None:
        self.records: list[EventRecord] = []
        self._tokens: list[frozenset] = []

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def append(self, start: int, end: int, text: str, urgent: bool = False,
               source: str = "caption_eviction") -> EventRecord:
        rec = EventRecord(len(self.records) + 1, start, end, text, urgent, source)
        self.records.append(rec)
        self._tokens.append(tokens(text))
        return rec

    def token_set(self, rec: EventRecord) -> frozenset:
        return self._tokens[rec.seq - 1]

    def dump_lines(self) -> list[str]:
        import json

        return [json.dumps({"seq": r.seq, "start": r.start, "end": r.end, "source": r.source,
                            "urgent": r.urgent, "text": r.text}, sort_keys=True)
                for r in self.records]


@dataclass(frozen=True)
class ScoredEvent:
    score: float
    record: EventRecord


class Retriever(Protocol):
    def retrieve(self, history: EventHistory, query: str, k: int,
                 exclude: frozenset = frozenset()) -> list[ScoredEvent]: ...


class LexicalRetriever:
    """Token-set Jaccard scoring; ties go to the newer record."""

    def retrieve(self, history: EventHistory, query: str, k: int,
                 exclude: frozenset = frozenset()) -> list[ScoredEvent]:
        if k < 1:
            raise ValidationError("k must be >= 1")
        q = tokens(query)
        scored = (
            (-jaccard(q, history.token_set(r)), -r.end, -r.seq, r)
            for r in history.records if r.seq not in exclude
        )
        best = heapq.nsmallest(k, scored, key=lambda t: t[:3])
        return [ScoredEvent(-s, r) for s, _, _, r in best]


def retrieve_events(history: EventHistory, query: str, k: int) -> list[ScoredEvent]:
    return LexicalRetriever().retrieve(history, query, k)


@dataclass(frozen=True)
class ContextBundle:
    query: str
    urgent: tuple = ()
    retrieved: tuple = ()  # ScoredEvent
    budget: int = 4000
    truncated: bool = False

    def render(self) -> str:
        parts = [self.query]
        parts += [r.render() for r in self.urgent]
        parts += [s.record.render() for s in self.retrieved]
        return "\n".join(parts)

    @property
    def size(self) -> int:
        return len(self.render())

    def to_doc(self) -> dict:
        return {
            "query": self.query,
            "urgent": [r.render() for r in self.urgent],
            "retrieved": [{"score": s.score, "event": s.record.render()} for s in self.retrieved],
            "truncated": self.truncated,
        }


def assemble_context(query: str, history: EventHistory, budget: int = 4000, now: int = 0,
                     horizon: int = 500, k: int = 8,
                     retriever: Optional[Retriever] = None) -> ContextBundle:
    """Query, then recent urgent events newest first, then retrieved events.

    Items are whole records joined by newlines.  Urgent records that do not
    fit drop the oldest and mark the bundle truncated; retrieval stops at the
    first record that does not fit.
    """
    if budget <= len(query):
        raise ValidationError("context budget must exceed the query length")
    used = len(query)
    urgent_pool = sorted(
        (r for r in history.records if r.urgent and now - r.end <= horizon),
        key=lambda r: (-r.end, -r.seq),
    )
    urgent, truncated = [], False
    for r in urgent_pool:
        cost = 1 + len(r.render())
        if used + cost > budget:
            truncated = True
            break
        urgent.append(r)
        used += cost
    taken = frozenset(r.seq for r in urgent)
    retrieved = []
    if not truncated and len(history):
        for s in (retriever or LexicalRetriever()).retrieve(history, query, k, exclude=taken):
            cost = 1 + len(s.record.render())
            if used + cost > budget:
                break
            retrieved.append(s)
            used += cost
    return ContextBundle(query, tuple(urgent), tuple(retrieved), budget, truncated)
