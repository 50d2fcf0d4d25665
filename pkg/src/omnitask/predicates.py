"""Perceivable predicates over the agent's world view.

A predicate is written as a one-key mapping, e.g. ``{"held": "cup"}``,
``{"on": ["cup", "table"]}``, ``{"all": [...]}``.  Evaluation reads only the
scene graph and the set of heard outputs, never the simulator's ground truth.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Any, Iterable, Protocol

from .errors import OmnitaskError, ValidationError

ARITY = {
    "robot_at": 1,
    "held": 1,
    "on": 2,
    "in": 2,
    "near": 2,
    "in_room": 2,
    "attr": 3,
    "present": 2,
    "absent": 2,
    "heard": (1, 2),
    "all": None,
    "any": None,
    "not": None,
}


class UnknownObjectError(OmnitaskError):
    pass


class View(Protocol):
    graph: Any
    heard: list


@dataclass(frozen=True)
class Predicate:
    op: str
    args: tuple

    @classmethod
    def parse(cls, doc: Any) -> "Predicate":
        if isinstance(doc, Predicate):
            return doc
        if not isinstance(doc, dict) or len(doc) != 1:
            raise ValidationError(f"predicate must be a single-key mapping, got {doc!r}")
        (op, raw), = doc.items()
        if op not in ARITY:
            raise ValidationError(f"unknown predicate {op!r}")
        if op in ("all", "any"):
            if not isinstance(raw, list) or not raw:
                raise ValidationError(f"{op} needs a non-empty list")
            return cls(op, tuple(cls.parse(p) for p in raw))
        if op == "not":
            return cls(op, (cls.parse(raw),))
        args = tuple(raw) if isinstance(raw, list) else (raw,)
        want = ARITY[op]
        ok = len(args) in want if isinstance(want, tuple) else len(args) == want
        if not ok:
            raise ValidationError(f"predicate {op} takes {want} arguments, got {len(args)}")
        return cls(op, args)

    def to_doc(self) -> dict:
        if self.op in ("all", "any"):
            return {self.op: [p.to_doc() for p in self.args]}
        if self.op == "not":
            return {"not": self.args[0].to_doc()}
        if len(self.args) == 1:
            return {self.op: self.args[0]}
        return {self.op: list(self.args)}

    def objects(self) -> set:
        """Object ids this predicate reads."""
        if self.op in ("all", "any", "not"):
            out: set = set()
            for p in self.args:
                out |= p.objects()
            return out
        if self.op in ("held", "attr", "in_room"):
            return {self.args[0]}
        if self.op in ("on", "in", "near"):
            return set(self.args)
        return set()

    def evaluate(self, view: View, since: int = -1, strict: bool = True) -> bool:
        """Truth value against ``view``.

        With ``strict`` an unobserved object raises UnknownObjectError;
        otherwise it simply makes the atom false.
        """
        try:
            return self._eval(view, since)
        except UnknownObjectError:
            if strict:
                raise
            return False

    def _eval(self, view: View, since: int) -> bool:
        g = view.graph
        op, a = self.op, self.args
        if op == "all":
            return all(p._eval(view, since) for p in a)
        if op == "any":
            hits = []
            for p in a:
                try:
                    if p._eval(view, since):
                        return True
                except UnknownObjectError as exc:
                    hits.append(exc)
            if hits:
                raise hits[0]
            return False
        if op == "not":
            return not a[0]._eval(view, since)
        if op == "robot_at":
            target = a[0]
            if target in g.rooms:
                return g.robot_room == target
            node = _node(g, target)
            return g.robot_room == node.room and g.robot_pose == target
        if op == "held":
            _node(g, a[0])
            return (a[0], "held_by", "robot") in g.edges
        if op in ("on", "in", "near"):
            _node(g, a[0])
            _node(g, a[1])
            return (a[0], op, a[1]) in g.edges
        if op == "in_room":
            return _node(g, a[0]).room == a[1]
        if op == "attr":
            return _node(g, a[0]).attrs.get(a[1]) == a[2]
        if op in ("present", "absent"):
            cls, room = a
            if room not in g.observed_rooms:
                raise UnknownObjectError(f"room {room!r} never observed")
            found = any(n.cls == cls and n.room == room for n in g.nodes.values())
            return found if op == "present" else not found
        if op == "heard":
            source = a[0]
            arg = a[1] if len(a) > 1 else None
            for tick, src, got_arg, _text in view.heard:
                if tick > since and src == source and (arg is None or got_arg == arg):
                    return True
            return False
        raise ValidationError(f"unknown predicate {op!r}")  # pragma: no cover


def _node(g, oid):
    node = g.nodes.get(oid)
    if node is None:
        raise UnknownObjectError(f"object {oid!r} never observed")
    return node


_PLACEHOLDER = re.compile(r"\{([a-z_]+)\}")


def fill(doc: Any, mapping: dict) -> Any:
    """Substitute ``{name}`` placeholders throughout a JSON-like document.

    A string that is exactly one placeholder takes the mapped value verbatim
    (so non-string values survive); otherwise str.format-style replacement.
    """
    if isinstance(doc, str):
        m = _PLACEHOLDER.fullmatch(doc)
        if m and m.group(1) in mapping:
            return mapping[m.group(1)]
        return _PLACEHOLDER.sub(lambda mm: str(mapping.get(mm.group(1), mm.group(0))), doc)
    if isinstance(doc, list):
        return [fill(x, mapping) for x in doc]
    if isinstance(doc, dict):
        return {k: fill(v, mapping) for k, v in doc.items()}
    return doc


def conjunction(preds: Iterable[Predicate]) -> Predicate | None:
    preds = [p for p in preds if p is not None]
    if not preds:
        return None
    if len(preds) == 1:
        return preds[0]
    return Predicate("all", tuple(preds))
