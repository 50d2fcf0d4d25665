"""The tick loop: logical time, the event trace, and task dispatch.

Each tick runs, in order: injections, timer scan, world physics, frame render
and perception, completion checks, then planning and dispatch.  Planning runs
only in ticks where something task-affecting happened.
"""

from __future__ import annotations

import heapq
import json
import random
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

from .errors import RuntimeHaltedError, ValidationError
from .memory import EventHistory, SceneGraph, assemble_context
from .perception import PerceptionConfig, PerceptionModule, Proposal, ScriptedCaptioner, ScriptedPerceiver
from .planner import Planner, PriorityRubric, RubricEvaluator, apply_edges, evaluate_priority
from .predicates import Predicate, fill
from .scripts import InstructionInterpreter, TaskScript, build_steps, schedule_of
from .tasks import TaskMemory, TaskRecord
from .tools import DEFAULT_DENY, MOTION_TOOLS, Command, ToolRegistry, ToolSpec, validate_manipulation
from .world import Disturbance, World

EVENT_KINDS = (
    "frame_ready", "instruction_received", "timer_fired", "proposal_emitted", "plan_decided",
    "command_issued", "command_rejected", "task_interrupted", "task_resumed", "task_completed",
    "task_failed", "disturbance_applied", "caption_recorded",
)

_FLOAT_TOKEN = "@@float:"
_FLOAT_RE = re.compile(r'"@@float:(-?[0-9]+\.[0-9]{6})"')


def _mark_floats(value: Any) -> Any:
    if isinstance(value, float):
        return f"{_FLOAT_TOKEN}{value:.6f}"
    if isinstance(value, dict):
        return {k: _mark_floats(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_mark_floats(v) for v in value]
    return value


def dumps_payload(payload: dict) -> str:
    """Canonical JSON: sorted keys, compact separators, floats at 6 decimals."""
    text = json.dumps(_mark_floats(payload), sort_keys=True, separators=(",", ":"))
    return _FLOAT_RE.sub(r"\1", text)


@dataclass(frozen=True)
class RuntimeEvent:
    seq: int
    time: int
    kind: str
    payload: dict

    def to_line(self) -> str:
        return (f'{{"seq":{self.seq},"time":{self.time},"kind":{json.dumps(self.kind)},'
                f'"payload":{dumps_payload(self.payload)}}}')


@dataclass(frozen=True)
class Trace:
    events: tuple = ()

    def lines(self) -> list[str]:
        return [e.to_line() for e in self.events]

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines())

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.text())

    def of_kind(self, *kinds: str) -> list[RuntimeEvent]:
        return [e for e in self.events if e.kind in kinds]

    def __len__(self) -> int:
        return len(self.events)

    @classmethod
    def read(cls, path) -> "Trace":
        events = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    d = json.loads(line)
                    events.append(RuntimeEvent(d["seq"], d["time"], d["kind"], d["payload"]))
        return cls(tuple(events))


@dataclass
class RuntimeConfig:
    seed: int = 42
    perception: PerceptionConfig = field(default_factory=PerceptionConfig)
    rubric: PriorityRubric = field(default_factory=PriorityRubric)
    default_deadline: int = 120
    step_slack: int = 5
    max_retries: int = 2
    context_budget: int = 4000
    urgent_horizon: int = 500
    retrieval_k: int = 8
    urgent_priority: int = 70
    deny: tuple = DEFAULT_DENY


@dataclass
class _Exec:
    """Dispatcher bookkeeping for one executing task."""

    idx: int = 0
    done: list = field(default_factory=list)
    inflight: Optional[Command] = None
    issued_at: int = 0
    expected: int = 0
    attempts: int = 0


class Runtime:
    def __init__(self, world: World, registry: Optional[ToolRegistry] = None,
                 proposer=None, captioner=None, evaluator=None,
                 interpreter: Optional[InstructionInterpreter] = None,
                 config: Optional[RuntimeConfig] = None):
        self.config = config or RuntimeConfig()
        self.registry = registry if registry is not None else ToolRegistry.with_builtins()
        self.registry.require_mandatory()
        self.world = world
        self.rng = random.Random(self.config.seed)
        self.clock = 0
        self.events: list[RuntimeEvent] = []
        self.halted = False
        self._trace: Optional[Trace] = None
        self.mem = TaskMemory(sink=self._emit)
        self.graph = SceneGraph(world.rooms)
        self.history = EventHistory()
        self.perception = PerceptionModule(self.graph, self.history, proposer or ScriptedPerceiver(),
                                           captioner or ScriptedCaptioner(), self.config.perception)
        self.planner = Planner(self.config.rubric)
        self.evaluator = evaluator or RubricEvaluator(self.config.rubric)
        self.interpreter = interpreter or InstructionInterpreter()
        self._queue: list[tuple] = []
        self._order = 0
        self._ids = {"p": 0, "a": 0, "s": 0}
        self._exec: dict[str, _Exec] = {}
        self._started: dict[str, int] = {}
        self._triggered = False
        self.notes: list[str] = []

    # -- plumbing ------------------------------------------------------------------

    def _emit(self, kind: str, payload: dict) -> None:
        if kind not in EVENT_KINDS:
            raise ValidationError(f"unknown event kind {kind!r}")
        self.events.append(RuntimeEvent(len(self.events) + 1, self.clock, kind, payload))
        if kind in ("task_completed", "task_failed", "command_rejected"):
            self._triggered = True

    def _new_id(self, prefix: str) -> str:
        self._ids[prefix] += 1
        return f"{prefix}{self._ids[prefix]}"

    def _push(self, at: int, kind: str, data: Any) -> None:
        self._order += 1
        heapq.heappush(self._queue, (at, self._order, kind, data))

    def _check_at(self, at: Optional[int]) -> int:
        if self.halted:
            raise RuntimeHaltedError("runtime is halted")
        if at is None:
            return self.clock + 1
        if at < self.clock:
            raise ValidationError(f"cannot inject at tick {at}; clock is {self.clock}")
        return max(at, self.clock + 1)

    # -- external inputs --------------------------------------------------------------

    def submit_instruction(self, text: str, at: Optional[int] = None) -> str:
        if not isinstance(text, str) or not text.strip():
            raise ValidationError("instruction text must be non-empty")
        tick = self._check_at(at)
        tid = self._new_id("p")
        self._push(tick, "instruction", (tid, text))
        return tid

    def inject_disturbance(self, d, at: Optional[int] = None) -> None:
        if isinstance(d, dict):
            d = Disturbance.from_doc(d, at=at if at is not None else self.clock + 1)
        self._push(self._check_at(at if at is not None else d.at), "disturbance", d)

    def inject_command(self, tool: str, op: str, args: Optional[dict] = None, at: Optional[int] = None) -> None:
        """A raw command outside any task (operator console, safety testing)."""
        self._push(self._check_at(at), "command", (tool, op, dict(args or {})))

    def register_schedule(self, doc: dict, at: Optional[int] = None) -> str:
        """Register a timer template from a script-like document with a ``schedule``."""
        if not doc.get("schedule"):
            raise ValidationError("scheduled registration needs a schedule")
        try:
            schedule_of(doc["schedule"])
            build_steps(doc.get("steps", []))
            TaskScript.from_doc({"match": "", **doc})
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed schedule document: {exc}") from None
        tid = self._new_id("s")
        self._push(self._check_at(at), "schedule", (tid, dict(doc)))
        return tid

    def register_tool(self, spec: ToolSpec, at: Optional[int] = None) -> None:
        self._push(self._check_at(at), "tool", spec)

    # -- task construction -----------------------------------------------------------

    def _record_from_script(self, tid: str, kind: str, text: str, script: TaskScript, now: int,
                            situation: str = "", mapping: Optional[dict] = None) -> TaskRecord:
        mapping = {"text": text, **(mapping or {})}
        steps = build_steps(script.steps, mapping)
        for st in steps:
            self.registry.get(st.tool).op(st.op)
        resources = (frozenset(script.resources) if script.resources is not None
                     else self.registry.resources_for(steps))
        post = fill(script.postcondition, mapping) if script.postcondition else None
        if post is not None:
            Predicate.parse(post)
        deadline = script.deadline if script.deadline is not None else (
            self.config.default_deadline if post is not None else None)
        deps = set()
        for label in script.depends_on:
            live = [t for t in self.mem.tasks.values() if t.label == label and t.schedule is None]
            if live:
                deps.add(max(live, key=lambda t: t.serial).id)
        return TaskRecord(
            id=tid, kind=kind, description=text, situation=situation, category=script.category,
            deps=frozenset(deps), created_at=now, schedule=schedule_of(script.schedule),
            interruptible=script.interruptible, postcondition=post, deadline_ticks=deadline,
            label=script.label, steps=steps, resources=resources,
        )

    def _deliver_instruction(self, tid: str, text: str) -> None:
        now = self.clock
        script = self.interpreter.interpret(text)
        rec = self._record_from_script(tid, "passive", text, script, now)
        self.mem.insert_task(rec)
        self._emit("instruction_received", {"task_id": tid, "text": text, "label": rec.label,
                                            "scheduled": rec.schedule is not None})
        self.history.append(now, now, f"user said: {text}", source="instruction_echo")
        if rec.schedule is None:
            self._triggered = True

    def _deliver_schedule(self, tid: str, doc: dict) -> None:
        script = TaskScript.from_doc({"match": "", **doc})
        rec = self._record_from_script(tid, "scheduled", doc.get("description", script.label),
                                       script, self.clock)
        self.mem.insert_task(rec)

    def _accept_proposal(self, p: Proposal) -> Optional[str]:
        if self.perception.dedupe_proposal(p, self.mem.tasks.values(), self.clock):
            return None
        tid = self._new_id("a")
        plan = p.plan or {}
        script = TaskScript("", p.label or p.category, p.category, tuple(plan.get("steps", ())),
                            plan.get("postcondition"), deadline=plan.get("deadline"))
        rec = self._record_from_script(tid, "active", p.description, script, self.clock, p.situation)
        self.mem.insert_task(rec)
        self._emit("proposal_emitted", {"task_id": tid, "category": p.category, "situation": p.situation,
                                        "description": p.description, "label": rec.label,
                                        "frame_index": p.frame_index})
        if p.category == "safety_check":
            self.perception.mark_urgent(p.frame_index)
        self._triggered = True
        return tid

    # -- the loop ----------------------------------------------------------------------

    def advance(self, n_ticks: int) -> list[RuntimeEvent]:
        if self.halted:
            raise RuntimeHaltedError("runtime is halted")
        if n_ticks < 0:
            raise ValidationError("n_ticks must be >= 0")
        start = len(self.events)
        for _ in range(n_ticks):
            self._tick()
        return self.events[start:]

    def _tick(self) -> None:
        self.clock += 1
        t = self.clock
        self._triggered = False
        # 1. injections
        while self._queue and self._queue[0][0] <= t:
            _, _, kind, data = heapq.heappop(self._queue)
            self._inject(kind, data)
        # 2. timers
        self.mem.trigger_scheduled(t)
        for iid, due in self.mem.last_fired:
            inst = self.mem.tasks[iid]
            self._emit("timer_fired", {"task_id": iid, "template": inst.template_id, "due": due,
                                       "label": inst.label})
            self._triggered = True
        # 3. physics
        for cmd, reason in self.world.step(t):
            self._emit("command_rejected", {**cmd.to_payload(), "reason": reason, "stage": "physics"})
        # 4. perception
        frame = self.world.render(t, t)
        if any(x.category == "safety_check" or (x.priority or 0) >= self.config.urgent_priority
               for x in self.mem.split("executing")):
            self.perception.mark_urgent(t)
        res = self.perception.ingest_frame(frame)
        self._emit("frame_ready", {"frame_index": frame.frame_index, "rooms": list(frame.rooms),
                                   "delta": res.delta.to_payload(),
                                   "audio": [list(a) for a in frame.audio]})
        for rec in res.records:
            self._emit("caption_recorded", {"seq": rec.seq, "start": rec.start, "end": rec.end,
                                            "text": rec.text, "urgent": rec.urgent})
        for p in res.proposals:
            self._accept_proposal(p)
        # 5. completion checks
        for task in self.mem.split("executing"):
            self._check_task(task)
        # 6. planning and dispatch
        rounds = 0
        while True:
            if self._triggered:
                self._triggered = False
                self._plan()
            self._pump_all()
            rounds += 1
            if not self._triggered or rounds > 1000:
                break

    def _inject(self, kind: str, data: Any) -> None:
        if kind == "instruction":
            self._deliver_instruction(*data)
        elif kind == "disturbance":
            info = self.world.apply_disturbance(data)
            self._emit("disturbance_applied", info)
        elif kind == "command":
            tool, op, args = data
            self._issue(Command.make(tool, op, args, None, self.clock), None, "console")
        elif kind == "schedule":
            self._deliver_schedule(*data)
        elif kind == "tool":
            self.registry.register(data)
        else:  # pragma: no cover
            raise ValidationError(f"unknown injection {kind!r}")

    # -- dispatch ----------------------------------------------------------------------

    def _issue(self, cmd: Command, task: Optional[TaskRecord], step_key: str, extra: Optional[dict] = None) -> bool:
        """Validate and send one command.  False means it was rejected."""
        reason = ""
        if cmd.tool == "manipulation":
            v = validate_manipulation(cmd, self.graph, self.config.deny)
            reason = "" if v.ok else v.reason
        if not reason:
            try:
                self.registry.check_command(cmd)
            except ValidationError as exc:
                reason = str(exc)
        if reason:
            self._emit("command_rejected", {**cmd.to_payload(), "reason": reason, "stage": "validation",
                                            "step": step_key})
            return False
        self._emit("command_issued", {**cmd.to_payload(), "step": step_key, **(extra or {})})
        self.world.enqueue(cmd)
        return True

    def _view_holds(self, pred: Optional[Predicate], since: int = -1) -> bool:
        return pred is not None and pred.evaluate(self.perception, since=since, strict=False)

    def _until(self, step) -> Optional[Predicate]:
        if step.until is not None:
            return step.until
        return self.registry.default_until(step.tool, step.op, step.argmap)

    def _stop_motion(self, task: TaskRecord, ex: _Exec) -> None:
        if ex.inflight is not None and ex.inflight.tool in MOTION_TOOLS:
            self._issue(Command.make(ex.inflight.tool, "halt", {}, task.id, self.clock), task, "halt")
        ex.inflight = None

    def _finish(self, task: TaskRecord, outcome: str, reason: str = "") -> None:
        ex = self._exec.pop(task.id, None)
        if ex is not None and outcome != "completed":
            self._stop_motion(task, ex)
        self.mem.finalize(task.id, outcome, now=self.clock, reason=reason)
        if outcome == "completed":
            self.history.append(self.clock, self.clock, f"completed {task.label}: {task.description}",
                                source="planner_note")
        for tid in [i for i in self._exec if self.mem.tasks[i].terminal]:
            del self._exec[tid]
        self._triggered = True

    def _check_task(self, task: TaskRecord) -> None:
        ex = self._exec.get(task.id)
        if ex is None:
            return
        t = self.clock
        task.exec_ticks += 1
        if ex.inflight is not None:
            step = task.steps[ex.idx]
            if self._view_holds(self._until(step), since=ex.issued_at):
                ex.done.append(step.key(ex.idx))
                ex.idx += 1
                ex.inflight = None
                ex.attempts = 0
                self._triggered = True
            elif t - ex.issued_at > ex.expected + self.config.step_slack:
                ex.attempts += 1
                if ex.attempts > self.config.max_retries:
                    self._finish(task, "failed", f"step {step.key(ex.idx)} timed out")
                    return
                ex.inflight = None
        if ex.inflight is None and ex.idx >= len(task.steps):
            self._conclude(task)
            return
        if task.deadline_ticks is not None and task.exec_ticks > task.deadline_ticks:
            self._finish(task, "failed", f"deadline {task.deadline_ticks} exceeded")

    def _conclude(self, task: TaskRecord) -> None:
        verdict, why = self.perception.check_completion(task, self.clock, self._started.get(task.id, -1))
        if verdict == "completed":
            self._finish(task, "completed")
        elif verdict == "failed":
            self._finish(task, "failed", why)

    def _pump_all(self) -> None:
        for task in self.mem.split("executing"):
            if task.id in self._exec and not task.terminal:
                self._pump(task)

    def _pump(self, task: TaskRecord) -> None:
        """Skip satisfied/guarded steps and issue the next command if none is in flight."""
        ex = self._exec[task.id]
        if ex.inflight is not None:
            return
        while ex.idx < len(task.steps):
            step = task.steps[ex.idx]
            key = step.key(ex.idx)
            extra = {}
            if step.when is not None:
                if not self._view_holds(step.when):
                    ex.done.append(key + ":skipped")
                    ex.idx += 1
                    continue
                extra["when"] = step.when.to_doc()
            until = self._until(step)
            effect = self.registry.get(step.tool).op(step.op).effect
            if effect != "output" and until is not None and self._view_holds(until):
                ex.done.append(key)
                ex.idx += 1
                continue
            cmd = Command.make(step.tool, step.op, step.argmap, task.id, self.clock)
            if ex.attempts:
                extra["attempt"] = ex.attempts + 1
            if not self._issue(cmd, task, key, extra):
                self._finish(task, "failed", f"command rejected at {key}")
                return
            ex.inflight = cmd
            ex.issued_at = self.clock
            ex.expected = self.world.estimate(cmd) + 1
            return
        if task.deadline_ticks is None or task.exec_ticks <= task.deadline_ticks:
            self._conclude(task)

    # -- planning ----------------------------------------------------------------------

    def _plan(self) -> None:
        now = self.clock
        rubric = self.planner.rubric
        notes: list[str] = []
        candidates = self.mem.executable_set(now)
        needs = [t for t in candidates if t.priority is None
                 or (rubric.reevaluate_on_resume and t.status == "interrupted")]
        if needs:
            snap = self.mem.snapshot(now)
            for task in needs:
                if task.terminal:
                    continue
                bundle = assemble_context(task.description, self.history, self.config.context_budget, now,
                                          self.config.urgent_horizon, self.config.retrieval_k)
                ev = evaluate_priority(self.evaluator, rubric, task, bundle, snap)
                task.priority = ev.score
                if ev.fallback:
                    notes.append(f"{task.id}: {ev.rationale}")
                notes.extend(apply_edges(self.mem, task, ev.after))
            candidates = self.mem.executable_set(now)
        executing = self.mem.split("executing")
        decision = self.planner.plan(candidates, executing, now)
        if decision.empty:
            return
        by_id = self.mem.tasks
        self._emit("plan_decided", {
            "dispatch": [{"task_id": i, "label": by_id[i].label, "priority": by_id[i].priority,
                          "tools": sorted({s.tool for s in by_id[i].steps}),
                          "resumed": i in decision.resumed} for i in decision.dispatch],
            "preempted": [{"task_id": i, "priority": by_id[i].priority, "by": b}
                          for i, b in decision.preempted],
            "rationale": notes + decision.rationale,
        })
        for tid, _by in decision.preempted:
            task = by_id[tid]
            ex = self._exec.pop(tid)
            inflight = ex.inflight
            self.mem.mark_interrupted(tid, ex.done)
            ex.inflight = inflight
            self._stop_motion(task, ex)
        for tid in decision.dispatch:
            ctx = self.mem.mark_executing(tid)
            self._started.setdefault(tid, now)
            self._exec[tid] = self._resume_state(by_id[tid], ctx)

    def _resume_state(self, task: TaskRecord, ctx: list) -> _Exec:
        ex = _Exec(idx=len(ctx), done=list(ctx))
        if ex.idx:
            prev = task.steps[ex.idx - 1]
            if (prev.tool == "navigation" and prev.op == "navigate"
                    and not ctx[-1].endswith(":skipped")
                    and not self._view_holds(self._until(prev))):
                ex.idx -= 1
                ex.done.pop()
        return ex

    # -- lifecycle ---------------------------------------------------------------------

    def quiescent(self) -> bool:
        if self._queue or not self.world.idle:
            return False
        for t in self.mem.live():
            if t.schedule is None or t.schedule.next_due() is not None:
                return False
        return True

    def run(self, horizon: int, stop_at_quiescence: bool = False) -> list[RuntimeEvent]:
        start = len(self.events)
        while self.clock < horizon:
            if stop_at_quiescence and self.clock > 0 and self.quiescent():
                break
            self.advance(1)
        return self.events[start:]

    def halt(self) -> Trace:
        if self._trace is None:
            self.halted = True
            self._trace = Trace(tuple(self.events))
        return self._trace

    @property
    def trace(self) -> Trace:
        return Trace(tuple(self.events))
