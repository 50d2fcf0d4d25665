"""Tool registry, commands and the manipulation safety check.

Tools are one-way: a ToolSpec has no channel through which a tool could
report task status back.  Whether a command worked is learned only from
later frames.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Optional

from .errors import StartupError, ValidationError
from .predicates import Predicate, conjunction

PARAM_TYPES = ("location", "object", "device", "text", "int", "number", "power")
EFFECTS = ("arrive", "hold", "place", "photo", "device", "output")
RESOURCE_TAGS = ("body", "audio", "network", "device")
MOTION_TOOLS = ("navigation", "manipulation")
DEFAULT_DENY = ("human", "animal")


@dataclass(frozen=True)
class Param:
    name: str
    type: str
    optional: bool = False


@dataclass(frozen=True)
class ToolOp:
    name: str
    params: tuple = ()
    effect: Optional[str] = "output"


@dataclass(frozen=True)
class ToolSpec:
    name: str
    description: str
    ops: tuple
    resources: frozenset = frozenset()
    mandatory: bool = False

    def __post_init__(self) -> None:
        names = [op.name for op in self.ops]
        if len(names) != len(set(names)):
            raise ValidationError(f"tool {self.name}: duplicate op names")
        for tag in self.resources:
            if tag not in RESOURCE_TAGS and not tag.startswith("device:"):
                raise ValidationError(f"tool {self.name}: unknown resource tag {tag!r}")
        for op in self.ops:
            if op.effect is not None and op.effect not in EFFECTS:
                raise ValidationError(f"tool {self.name}.{op.name}: unknown effect {op.effect!r}")
            for p in op.params:
                if p.type not in PARAM_TYPES:
                    raise ValidationError(f"tool {self.name}.{op.name}: unknown param type {p.type!r}")

    def op(self, name: str) -> ToolOp:
        for op in self.ops:
            if op.name == name:
                return op
        raise ValidationError(f"tool {self.name} has no op {name!r}")

    @classmethod
    def from_doc(cls, doc: dict) -> "ToolSpec":
        ops = []
        for o in doc["ops"]:
            params = tuple(Param(p["name"], p["type"], bool(p.get("optional", False)))
                           for p in o.get("params", []))
            ops.append(ToolOp(o["name"], params, o.get("effect", "output")))
        return cls(doc["name"], doc.get("description", ""), tuple(ops),
                   frozenset(doc.get("resources", [])), bool(doc.get("mandatory", False)))

    def to_doc(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "ops": [{"name": o.name, "effect": o.effect,
                     "params": [{"name": p.name, "type": p.type, "optional": p.optional}
                                for p in o.params]} for o in self.ops],
            "resources": sorted(self.resources),
            "mandatory": self.mandatory,
        }


def _op(name, *params, effect="output"):
    return ToolOp(name, tuple(Param(*p) for p in params), effect)


BUILTIN_TOOLS = {
    "navigation": ToolSpec(
        "navigation", "Moves the robot base to a room or a piece of furniture.",
        (_op("navigate", ("target", "location"), effect="arrive"), _op("halt", effect=None)),
        frozenset({"body"}), mandatory=True),
    "manipulation": ToolSpec(
        "manipulation", "Arm and gripper: grasp, place, and camera shots of objects.",
        (_op("grasp", ("object", "object"), effect="hold"),
         _op("place", ("object", "object"), ("target", "object"), effect="place"),
         _op("photo", ("target", "object"), effect="photo"),
         _op("halt", effect=None)),
        frozenset({"body"}), mandatory=True),
    "iot": ToolSpec(
        "iot", "Switches smart-home devices and sets their level.",
        (_op("set_device", ("device", "device"), ("power", "power"), ("level", "int", True),
             effect="device"),),
        frozenset({"device"})),
    "web": ToolSpec(
        "web", "Looks things up online, places orders, streams media.",
        (_op("query", ("topic", "text")), _op("order", ("item", "text")), _op("play", ("item", "text"))),
        frozenset({"network"})),
    "speaker": ToolSpec(
        "speaker", "Speaks a sentence aloud.",
        (_op("say", ("text", "text")),),
        frozenset({"audio"})),
}


@dataclass(frozen=True)
class Command:
    tool: str
    op: str
    args: tuple = ()  # sorted (name, value) pairs
    task_id: Optional[str] = None
    issued_at: int = 0

    @classmethod
    def make(cls, tool, op, args=None, task_id=None, issued_at=0) -> "Command":
        return cls(tool, op, tuple(sorted((args or {}).items())), task_id, issued_at)

    @property
    def argmap(self) -> dict:
        return dict(self.args)

    def to_payload(self) -> dict:
        return {"tool": self.tool, "op": self.op, "args": self.argmap, "task_id": self.task_id}


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: str = ""


class ToolRegistry:
    def __init__(self, specs: Iterable[ToolSpec] = ()):
        self.tools: dict[str, ToolSpec] = {}
        for s in specs:
            self.register(s)

    @classmethod
    def with_builtins(cls, names: Optional[Iterable[str]] = None) -> "ToolRegistry":
        names = list(BUILTIN_TOOLS) if names is None else list(names)
        unknown = [n for n in names if n not in BUILTIN_TOOLS]
        if unknown:
            raise ValidationError(f"unknown built-in tools {unknown}")
        return cls(BUILTIN_TOOLS[n] for n in names)

    def register(self, spec: ToolSpec) -> None:
        if spec.name in self.tools:
            raise ValidationError(f"tool {spec.name!r} already registered")
        self.tools[spec.name] = spec

    def __contains__(self, name: str) -> bool:
        return name in self.tools

    def get(self, name: str) -> ToolSpec:
        try:
            return self.tools[name]
        except KeyError:
            raise ValidationError(f"no tool named {name!r}") from None

    def require_mandatory(self) -> None:
        missing = [n for n, s in BUILTIN_TOOLS.items() if s.mandatory and n not in self.tools]
        if missing:
            raise StartupError(f"mandatory tools missing: {missing}")

    def vocabulary(self) -> list[str]:
        return sorted(f"{t}.{o.name}" for t, s in self.tools.items() for o in s.ops)

    def check_command(self, cmd: Command, known: Optional[Callable[[str, Any], bool]] = None) -> None:
        """Arity and semantic-type check; raises ValidationError listing problems."""
        op = self.get(cmd.tool).op(cmd.op)
        args = cmd.argmap
        problems = []
        names = {p.name for p in op.params}
        for extra in sorted(set(args) - names):
            problems.append(f"unexpected argument {extra!r}")
        for p in op.params:
            if p.name not in args:
                if not p.optional:
                    problems.append(f"missing argument {p.name!r}")
                continue
            v = args[p.name]
            if p.type in ("int",) and (not isinstance(v, int) or isinstance(v, bool)):
                problems.append(f"{p.name}: expected int")
            elif p.type == "number" and (not isinstance(v, (int, float)) or isinstance(v, bool)):
                problems.append(f"{p.name}: expected number")
            elif p.type == "power" and v not in ("on", "off"):
                problems.append(f"{p.name}: expected on/off")
            elif p.type in ("location", "object", "device", "text") and not isinstance(v, str):
                problems.append(f"{p.name}: expected string")
            elif known is not None and p.type in ("location", "object", "device") and not known(p.type, v):
                problems.append(f"{p.name}: unknown {p.type} {v!r}")
        if problems:
            raise ValidationError(f"bad command {cmd.tool}.{cmd.op}", problems)

    def resources_for(self, steps: Iterable) -> frozenset:
        tags: set = set()
        for st in steps:
            tags |= self.get(st.tool).resources
        return frozenset(tags)

    def default_until(self, tool: str, op: str, args: dict) -> Optional[Predicate]:
        """The perceivable effect that marks a command done (None: nothing to observe)."""
        effect = self.get(tool).op(op).effect
        if effect == "arrive":
            return Predicate("robot_at", (args["target"],))
        if effect == "hold":
            return Predicate("held", (args["object"],))
        if effect == "place":
            return Predicate("on", (args["object"], args["target"]))
        if effect == "photo":
            return Predicate("attr", (args["target"], "photographed", True))
        if effect == "device":
            parts = [Predicate("attr", (args["device"], "power", args["power"]))]
            if "level" in args:
                parts.append(Predicate("attr", (args["device"], "level", args["level"])))
            return conjunction(parts)
        if effect == "output":
            return Predicate("heard", (f"{tool}.{op}",))
        return None


_TARGET_ARGS = {"grasp": ("object",), "place": ("target",), "photo": ("target",)}


def validate_manipulation(cmd: Command, graph, deny: Iterable[str] = DEFAULT_DENY) -> Verdict:
    """Safety gate run before any manipulation command leaves the planner.

    ok iff each target object is believed to exist, is in the robot's room,
    and is not on the deny list (checked by id and by class).  The verdict is
    never written to the event history.
    """
    deny = set(deny)
    for name in _TARGET_ARGS.get(cmd.op, ()):
        oid = cmd.argmap.get(name)
        node = graph.nodes.get(oid)
        if oid in deny or (node is not None and node.cls in deny):
            return Verdict(False, f"deny-list: {oid}")
        if node is None:
            return Verdict(False, f"unknown object: {oid}")
        if node.room != graph.robot_room:
            return Verdict(False, f"unreachable: {oid} is in {node.room}, robot in {graph.robot_room}")
    return Verdict(True)
