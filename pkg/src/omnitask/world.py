"""Ground-truth household world and its tick-based physics.

Commands are queued by the dispatcher and started in the next physics step.
Navigation takes 10 ticks per room hop (3 for a move inside a room, 1 if
already there), grasp/place/photo take 5, device and output ops take 1.
The agent only learns outcomes from rendered frames.
"""

from __future__ import annotations

import copy
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Optional

from .errors import ScenarioError, ValidationError
from .memory import ROBOT, Observation
from .tools import Command

HOP_TICKS = 10
LOCAL_MOVE_TICKS = 3
ARM_TICKS = 5
QUICK_TICKS = 1


@dataclass
class WorldObject:
    id: str
    cls: str
    room: str
    position: Optional[tuple] = None  # (relation, target)
    attrs: dict = field(default_factory=dict)
    fixed: bool = False
    level_range: Optional[tuple] = None


@dataclass
class Robot:
    room: str
    pose: Optional[str] = None
    battery: int = 100


@dataclass
class Motion:
    cmd: Command
    remaining: int
    route: list = field(default_factory=list)  # rooms still to enter (navigation)
    snapshot: Any = None


@dataclass(frozen=True)
class Disturbance:
    at: int
    kind: str  # move | add | remove | set_attr
    params: dict

    KINDS = ("move", "add", "remove", "set_attr")

    @classmethod
    def from_doc(cls, doc: dict, at: Optional[int] = None) -> "Disturbance":
        kinds = [k for k in cls.KINDS if k in doc]
        if len(kinds) != 1:
            raise ScenarioError(f"disturbance needs exactly one of {cls.KINDS}: {doc!r}")
        k = kinds[0]
        params = doc[k]
        if k == "remove" and isinstance(params, str):
            params = {"object": params}
        return cls(doc.get("at", at) if at is None else at, k, dict(params))

    def to_doc(self) -> dict:
        return {self.kind: dict(self.params)}


class World:
    def __init__(self, rooms, objects=(), robot_room=None, robot_pose=None,
                 adjacency=None, knowledge=None, watched_rooms=()):
        self.rooms = list(rooms)
        if not self.rooms:
            raise ScenarioError("world needs at least one room")
        if adjacency is None:
            self.adjacency = {r: sorted(set(self.rooms) - {r}) for r in self.rooms}
        else:
            self.adjacency = {r: [] for r in self.rooms}
            for a, b in adjacency:
                self.adjacency[a].append(b)
                self.adjacency[b].append(a)
            for r in self.adjacency:
                self.adjacency[r] = sorted(set(self.adjacency[r]))
        self.objects: dict[str, WorldObject] = {}
        for o in objects:
            self.objects[o.id] = o
        self.robot = Robot(robot_room or self.rooms[0], robot_pose)
        self.knowledge = dict(knowledge or {})
        self.watched_rooms = [r for r in self.rooms if r in set(watched_rooms)]
        self.motions: dict[str, Motion] = {}
        self.queued: list[Command] = []
        self.outputs: list[tuple] = []  # (tick, source, arg, text) produced this tick
        self.output_log: list[tuple] = []
        self._check()

    # -- construction -----------------------------------------------------------

    @classmethod
    def from_doc(cls, doc: dict) -> "World":
        objs = []
        for o in doc.get("objects", []):
            objs.append(_object_from_doc(o))
        robot = doc.get("robot", {})
        w = cls(doc["rooms"], objs, robot.get("room"), robot.get("pose"),
                doc.get("adjacency"), doc.get("knowledge"), doc.get("watched_rooms", ()))
        for oid in robot.get("holding", []):
            if oid not in w.objects:
                raise ScenarioError(f"robot holds unknown object {oid!r}")
            w.objects[oid].position = ("held_by", ROBOT)
            w.objects[oid].room = w.robot.room
        w._check()
        return w

    def _check(self) -> None:
        problems = []
        if self.robot.room not in self.rooms:
            problems.append(f"robot room {self.robot.room!r} unknown")
        if self.robot.pose is not None and self.robot.pose not in self.objects:
            problems.append(f"robot pose {self.robot.pose!r} unknown")
        for o in self.objects.values():
            if o.room not in self.rooms:
                problems.append(f"object {o.id}: unknown room {o.room!r}")
            if o.position is not None:
                rel, tgt = o.position
                if rel not in ("on", "in", "near", "held_by"):
                    problems.append(f"object {o.id}: unknown relation {rel!r}")
                elif rel == "held_by":
                    if tgt != ROBOT:
                        problems.append(f"object {o.id}: held by unknown agent {tgt!r}")
                elif tgt not in self.objects:
                    problems.append(f"object {o.id}: unknown support {tgt!r}")
                elif self.objects[tgt].room != o.room:
                    problems.append(f"object {o.id}: support {tgt} is in another room")
        if problems:
            raise ScenarioError("invalid world", problems)

    # -- queries ------------------------------------------------------------------

    def knows(self, ptype: str, value: Any) -> bool:
        if ptype == "location":
            return value in self.rooms or value in self.objects
        if ptype == "object":
            return value in self.objects
        if ptype == "device":
            o = self.objects.get(value)
            return o is not None and "power" in o.attrs
        return True

    def room_of(self, entity: str) -> Optional[str]:
        if entity in self.rooms:
            return entity
        o = self.objects.get(entity)
        return o.room if o else None

    def route(self, src: str, dst: str) -> list[str]:
        """Rooms entered on a shortest path from src to dst (excluding src)."""
        if src == dst:
            return []
        prev = {src: None}
        q = deque([src])
        while q:
            r = q.popleft()
            for n in self.adjacency[r]:
                if n not in prev:
                    prev[n] = r
                    q.append(n)
        if dst not in prev:
            raise ValidationError(f"no route from {src} to {dst}")
        path = []
        r = dst
        while r != src:
            path.append(r)
            r = prev[r]
        return path[::-1]

    def estimate(self, cmd: Command, from_room: Optional[str] = None, from_pose=None) -> int:
        """Nominal duration in ticks of a command started now."""
        if cmd.tool == "navigation" and cmd.op == "navigate":
            target = cmd.argmap["target"]
            room = self.room_of(target)
            if room is None:
                return QUICK_TICKS
            hops = len(self.route(from_room or self.robot.room, room))
            if hops:
                return HOP_TICKS * hops
            pose = self.robot.pose if from_pose is None else from_pose
            if target in self.rooms or pose == target:
                return QUICK_TICKS
            return LOCAL_MOVE_TICKS
        if cmd.tool == "manipulation" and cmd.op != "halt":
            return ARM_TICKS
        return QUICK_TICKS

    def ground_truth_edges(self) -> set:
        return {(o.id, o.position[0], o.position[1]) for o in self.objects.values() if o.position}

    @property
    def idle(self) -> bool:
        return not self.motions and not self.queued

    # -- dynamics -----------------------------------------------------------------

    def enqueue(self, cmd: Command) -> None:
        self.queued.append(cmd)

    def halt(self, tool: str) -> None:
        self.motions.pop(tool, None)

    def execute_command(self, cmd: Command, now: int) -> Optional[str]:
        """Start a command.  Returns a rejection reason if physically impossible.

        Nothing is reported back to the planner; a rejection only shows in the
        trace and the world is left unchanged.
        """
        a = cmd.argmap
        if cmd.op == "halt":
            self.halt(cmd.tool)
            return None
        if cmd.tool == "navigation":
            target = a["target"]
            room = self.room_of(target)
            if room is None:
                return f"unknown location {target}"
            route = self.route(self.robot.room, room)
            remaining = HOP_TICKS if route else self.estimate(cmd)
            self.motions["navigation"] = Motion(cmd, remaining, route)
            if route or self.robot.pose != target:
                self.robot.pose = None
            return None
        if cmd.tool == "manipulation":
            oid = a.get("object") if cmd.op in ("grasp", "place") else a.get("target")
            obj = self.objects.get(oid)
            if obj is None:
                return f"unknown object {oid}"
            if cmd.op == "grasp":
                if obj.position and obj.position[0] == "held_by":
                    return f"{oid} already held"
                if obj.fixed:
                    return f"{oid} is fixed in place"
                if obj.room != self.robot.room:
                    return f"{oid} out of reach"
                snapshot = (obj.room, obj.position)
            elif cmd.op == "place":
                if not obj.position or obj.position[0] != "held_by":
                    return f"{oid} not held"
                if a["target"] not in self.objects:
                    return f"unknown object {a['target']}"
                snapshot = None
            else:
                snapshot = None
            self.motions["manipulation"] = Motion(cmd, ARM_TICKS, snapshot=snapshot)
            return None
        if cmd.tool == "iot" or (cmd.op == "set_device"):
            dev = self.objects.get(a.get("device"))
            if dev is None or "power" not in dev.attrs:
                return f"unknown device {a.get('device')}"
            lvl = a.get("level")
            if lvl is not None and dev.level_range and not dev.level_range[0] <= lvl <= dev.level_range[1]:
                return f"level {lvl} outside {list(dev.level_range)}"
            self.motions[f"{cmd.tool}:{dev.id}"] = Motion(cmd, QUICK_TICKS)
            return None
        self.motions[f"{cmd.tool}:{cmd.op}:{len(self.output_log) + len(self.queued)}:{now}"] = Motion(cmd, QUICK_TICKS)
        return None

    def step(self, now: int) -> list[tuple[Command, str]]:
        """One physics tick.  Returns (command, reason) for impossible commands."""
        self.outputs = []
        rejected = []
        queued, self.queued = self.queued, []
        for cmd in queued:
            reason = self.execute_command(cmd, now)
            if reason:
                rejected.append((cmd, reason))
        for key in list(self.motions):
            m = self.motions.get(key)
            if m is None:
                continue
            m.remaining -= 1
            if m.remaining > 0:
                continue
            if m.cmd.tool == "navigation" and m.route:
                self._enter(m.route.pop(0))
                if m.route:
                    m.remaining = HOP_TICKS
                    continue
            del self.motions[key]
            self._finish(m, now)
        return rejected

    def _enter(self, room: str) -> None:
        self.robot.room = room
        self.robot.pose = None
        for o in self.objects.values():
            if o.position and o.position[0] == "held_by":
                o.room = room

    def _finish(self, m: Motion, now: int) -> None:
        cmd, a = m.cmd, m.cmd.argmap
        if cmd.tool == "navigation":
            target = a["target"]
            self.robot.pose = None if target in self.rooms else target
            return
        if cmd.tool == "manipulation":
            if cmd.op == "grasp":
                obj = self.objects.get(a["object"])
                if obj is None or (obj.room, obj.position) != m.snapshot or obj.room != self.robot.room:
                    return  # target moved or vanished mid-grasp: the grasp misses
                obj.position = ("held_by", ROBOT)
                obj.attrs.pop("knocked_over", None)
                return
            if cmd.op == "place":
                obj, tgt = self.objects.get(a["object"]), self.objects.get(a["target"])
                if obj is None or tgt is None or tgt.room != self.robot.room:
                    return
                if not obj.position or obj.position[0] != "held_by":
                    return
                obj.position = ("on", tgt.id)
                obj.room = tgt.room
                return
            if cmd.op == "photo":
                tgt = self.objects.get(a["target"])
                if tgt is not None and tgt.room == self.robot.room:
                    tgt.attrs["photographed"] = True
                return
        if cmd.op == "set_device" and "device" in a:
            dev = self.objects[a["device"]]
            dev.attrs["power"] = a["power"]
            if "level" in a:
                dev.attrs["level"] = a["level"]
            return
        self._output(cmd, now)

    def _output(self, cmd: Command, now: int) -> None:
        a = cmd.argmap
        source = f"{cmd.tool}.{cmd.op}"
        first = a[sorted(a)[0]] if a else None
        if cmd.tool == "web" and cmd.op == "query":
            text = str(self.knowledge.get(a["topic"], f"no information about {a['topic']}"))
        elif cmd.tool == "web" and cmd.op == "order":
            text = f"order placed: {a['item']}"
        elif cmd.tool == "web" and cmd.op == "play":
            text = f"now playing: {a['item']}"
        elif cmd.tool == "speaker":
            text = _render_text(a["text"], self.knowledge)
        else:
            text = f"{source}(" + ", ".join(f"{k}={v}" for k, v in sorted(a.items())) + ")"
        rec = (now, source, first, text)
        self.outputs.append(rec)
        self.output_log.append(rec)

    def apply_disturbance(self, d: Disturbance) -> dict:
        p = d.params
        if d.kind == "add":
            obj = _object_from_doc(p)
            if obj.id in self.objects:
                raise ScenarioError(f"disturbance adds existing object {obj.id!r}")
            self.objects[obj.id] = obj
        else:
            oid = p.get("object")
            obj = self.objects.get(oid)
            if obj is None:
                raise ScenarioError(f"disturbance references unknown object {oid!r}")
            if d.kind == "remove":
                del self.objects[oid]
                for o in self.objects.values():
                    if o.position and o.position[1] == oid:
                        o.position = None
            elif d.kind == "move":
                if "room" in p:
                    obj.room = p["room"]
                obj.position = tuple(p["position"]) if p.get("position") else None
                if obj.position and obj.position[0] != "held_by" and obj.position[1] in self.objects:
                    obj.room = self.objects[obj.position[1]].room
            else:
                obj.attrs.update(p.get("attrs", {}))
        try:
            self._check()
        except ScenarioError as exc:
            raise ScenarioError(f"disturbance leaves an invalid world: {exc}") from None
        return {"kind": d.kind, **{k: v for k, v in p.items()}}

    # -- observation --------------------------------------------------------------

    def observed_rooms(self) -> list[str]:
        rooms = set(self.watched_rooms) | {self.robot.room}
        return [r for r in self.rooms if r in rooms]

    def render(self, frame_index: int, now: int, camera_id: str = "main"):
        from .perception import Frame

        rooms = self.observed_rooms()
        inside = set(rooms)
        obs = [Observation.make(ROBOT, "robot", {"pose": self.robot.pose or ""}, self.robot.room)]
        for oid in sorted(self.objects):
            o = self.objects[oid]
            if o.room in inside:
                obs.append(Observation.make(o.id, o.cls, copy.deepcopy(o.attrs), o.room, o.position))
        audio = tuple(self.outputs)
        return Frame(frame_index, now, camera_id, tuple(obs), tuple(rooms), audio)

    def object_count(self) -> int:
        return len(self.objects)


def _object_from_doc(o: dict) -> WorldObject:
    pos = o.get("position")
    rng = o.get("level_range")
    return WorldObject(o["id"], o["class"], o["room"], tuple(pos) if pos else None,
                       dict(o.get("attrs", {})), bool(o.get("fixed", False)),
                       tuple(rng) if rng else None)


def _render_text(text: str, knowledge: dict) -> str:
    out = text
    for k, v in knowledge.items():
        out = out.replace("{" + k + "}", str(v))
    return out
