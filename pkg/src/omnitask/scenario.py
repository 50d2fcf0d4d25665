"""Scenario documents: schema validation, referential checks, runtime construction."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Optional

import jsonschema

from .errors import ScenarioError, ValidationError
from .perception import PerceptionConfig, ProposalRule, ScriptedCaptioner, ScriptedPerceiver
from .planner import PriorityRubric, RemoteEvaluator, RubricEvaluator, ScriptedEvaluator
from .predicates import Predicate
from .remote import RemoteCaptioner
from .runtime import Runtime, RuntimeConfig
from .scripts import ACK_SCRIPT, InstructionInterpreter, TaskScript
from .tools import ToolRegistry, ToolSpec
from .world import Disturbance, World

_TOOL_REF = "tool.schema.json"


def _read_schema(name: str) -> dict:
    return json.loads(resources.files("omnitask").joinpath("schema", name).read_text(encoding="utf-8"))


def _inline_tool_refs(node, tool_schema):
    if isinstance(node, dict):
        if node.get("$ref") == _TOOL_REF:
            return {"$ref": "#/$defs/tool"}
        return {k: _inline_tool_refs(v, tool_schema) for k, v in node.items()}
    if isinstance(node, list):
        return [_inline_tool_refs(v, tool_schema) for v in node]
    return node


@lru_cache(maxsize=None)
def tool_validator() -> jsonschema.Draft202012Validator:
    return jsonschema.Draft202012Validator(_read_schema("tool.schema.json"))


@lru_cache(maxsize=None)
def scenario_validator() -> jsonschema.Draft202012Validator:
    tool = _read_schema("tool.schema.json")
    tool = {k: v for k, v in tool.items() if k not in ("$schema", "$id")}
    schema = _inline_tool_refs(_read_schema("scenario.schema.json"), tool)
    schema["$defs"]["tool"] = tool
    return jsonschema.Draft202012Validator(schema)


def _schema_problems(validator, doc) -> list[str]:
    out = []
    for err in sorted(validator.iter_errors(doc), key=lambda e: [str(p) for p in e.absolute_path]):
        where = "/".join(str(p) for p in err.absolute_path) or "<root>"
        out.append(f"{where}: {err.message}")
    return out


def parse_tool_doc(doc: dict) -> ToolSpec:
    problems = _schema_problems(tool_validator(), doc)
    if problems:
        raise ValidationError("invalid tool document", problems)
    return ToolSpec.from_doc(doc)


def _check_steps(where: str, steps, registry: ToolRegistry, problems: list) -> None:
    for i, st in enumerate(steps or []):
        if st["tool"] not in registry:
            problems.append(f"{where}/steps/{i}: unknown tool {st['tool']!r}")
            continue
        try:
            registry.get(st["tool"]).op(st["op"])
        except ValidationError as exc:
            problems.append(f"{where}/steps/{i}: {exc}")
        for key in ("until", "when"):
            if st.get(key) is not None:
                try:
                    Predicate.parse(st[key])
                except ValidationError as exc:
                    problems.append(f"{where}/steps/{i}/{key}: {exc}")


@dataclass
class Scenario:
    doc: dict

    @property
    def name(self) -> str:
        return self.doc["name"]

    @property
    def seed(self) -> int:
        return self.doc["seed"]

    @property
    def horizon(self) -> int:
        return self.doc["horizon"]

    @property
    def golden(self) -> list:
        return list(self.doc.get("golden", []))

    @classmethod
    def load(cls, path) -> "Scenario":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ScenarioError(f"{path}: not valid JSON ({exc})") from None
        return cls.from_doc(doc)

    @classmethod
    def from_doc(cls, doc: dict) -> "Scenario":
        problems = _schema_problems(scenario_validator(), doc)
        if problems:
            raise ScenarioError("scenario fails schema validation", problems)
        sc = cls(copy.deepcopy(doc))
        sc._check_references()
        return sc

    # -- referential checks ----------------------------------------------------------

    def registry(self) -> ToolRegistry:
        tools = self.doc.get("tools", {})
        reg = ToolRegistry.with_builtins(tools.get("builtin"))
        for t in tools.get("custom", []):
            reg.register(ToolSpec.from_doc(t))
        return reg

    def _labels(self) -> set:
        scripts = self.doc.get("scripts", {})
        labels = {ACK_SCRIPT.label}
        labels |= {s["label"] for s in scripts.get("instructions", [])}
        labels |= {s.get("label") or s["category"] for s in scripts.get("proposals", [])}
        labels |= {s["label"] for s in self.doc.get("scheduled", [])}
        labels |= {e["schedule"]["label"] for e in self.doc.get("timeline", []) if "schedule" in e}
        return labels

    def _check_references(self) -> None:
        d = self.doc
        problems: list[str] = []
        try:
            world = World.from_doc(d["world"])
        except ValidationError as exc:
            problems.append(str(exc))
            world = None
        if world is not None:
            for r in d["world"].get("watched_rooms", []):
                if r not in world.rooms:
                    problems.append(f"world/watched_rooms: unknown room {r!r}")
            for a, b in d["world"].get("adjacency", []):
                for r in (a, b):
                    if r not in world.rooms:
                        problems.append(f"world/adjacency: unknown room {r!r}")
        try:
            registry = self.registry()
            registry.require_mandatory()
        except Exception as exc:  # StartupError / ValidationError
            problems.append(f"tools: {exc}")
            registry = ToolRegistry.with_builtins()
        ticks = [e["tick"] for e in d.get("timeline", [])]
        if ticks != sorted(ticks):
            problems.append("timeline: entries must be sorted by tick")
        for i, e in enumerate(d.get("timeline", [])):
            if "register_tool" in e:
                try:
                    registry.register(ToolSpec.from_doc(e["register_tool"]))
                except ValidationError as exc:
                    problems.append(f"timeline/{i}/register_tool: {exc}")
        scripts = d.get("scripts", {})
        for i, s in enumerate(scripts.get("instructions", [])):
            _check_steps(f"scripts/instructions/{i}", s.get("steps"), registry, problems)
        for i, s in enumerate(scripts.get("proposals", [])):
            _check_steps(f"scripts/proposals/{i}", s.get("steps"), registry, problems)
        for i, s in enumerate(d.get("scheduled", [])):
            _check_steps(f"scheduled/{i}", s.get("steps"), registry, problems)
        for i, e in enumerate(d.get("timeline", [])):
            if "schedule" in e:
                _check_steps(f"timeline/{i}/schedule", e["schedule"].get("steps"), registry, problems)
            if "command" in e and e["command"]["tool"] not in registry:
                problems.append(f"timeline/{i}/command: unknown tool {e['command']['tool']!r}")
        labels = self._labels()
        objects = {o["id"] for o in d["world"].get("objects", [])}
        objects |= {e["disturbance"]["add"]["id"] for e in d.get("timeline", [])
                    if "disturbance" in e and "add" in e["disturbance"]}
        for i, m in enumerate(d.get("golden", [])):
            for path, value in m.get("match", {}).items():
                leaf = path.split(".")[-1]
                if leaf == "label" and value not in labels:
                    problems.append(f"golden/{i}: unknown task label {value!r}")
                elif path == "tool" and value not in registry:
                    problems.append(f"golden/{i}: unknown tool {value!r}")
                elif path in ("args.object", "args.target", "args.device") and value not in objects \
                        and (world is None or value not in world.rooms):
                    problems.append(f"golden/{i}: unknown entity {value!r}")
        if problems:
            raise ScenarioError(f"scenario {d.get('name')!r} has invalid references", problems)

    # -- construction -------------------------------------------------------------------

    def runtime_config(self, seed: Optional[int] = None) -> RuntimeConfig:
        c = self.doc.get("config", {})
        pc = PerceptionConfig(**{k: c[k] for k in ("short_capacity", "long_capacity", "thin_modulus",
                                                   "caption_batch", "caption_retries", "dedupe_ttl") if k in c})
        rubric = PriorityRubric(margin=c.get("preemption_margin", 20), aging=c.get("aging", False),
                                reevaluate_on_resume=c.get("reevaluate_on_resume", False),
                                scale=c.get("priority_scale", 1.0))
        extra = {k: c[k] for k in ("default_deadline", "step_slack", "max_retries", "context_budget",
                                   "urgent_horizon", "retrieval_k") if k in c}
        if "deny" in c:
            extra["deny"] = tuple(c["deny"])
        return RuntimeConfig(seed=self.seed if seed is None else seed, perception=pc, rubric=rubric, **extra)

    def build_runtime(self, seed: Optional[int] = None, with_timeline: bool = True) -> Runtime:
        d = self.doc
        config = self.runtime_config(seed)
        scripts = d.get("scripts", {})
        interp = InstructionInterpreter(TaskScript.from_doc(s) for s in scripts.get("instructions", []))
        proposer = ScriptedPerceiver(ProposalRule.from_doc(r) for r in scripts.get("proposals", []))
        cap = d.get("captioner", {"mode": "scripted"})
        if cap["mode"] == "remote":
            captioner = RemoteCaptioner(cap["url"], cap.get("prompt", "Describe what happened in these frames."))
        else:
            captioner = ScriptedCaptioner(cap.get("failures"))
        ev = d.get("evaluator", {"mode": "rubric"})
        if ev["mode"] == "scripted":
            evaluator = ScriptedEvaluator(ev.get("table", {}), config.rubric)
        elif ev["mode"] == "remote":
            evaluator = RemoteEvaluator(ev["url"])
        else:
            evaluator = RubricEvaluator(config.rubric)
        rt = Runtime(World.from_doc(d["world"]), self.registry(), proposer, captioner, evaluator,
                     interp, config)
        for s in d.get("scheduled", []):
            rt.register_schedule(s, at=1)
        if with_timeline:
            for e in d.get("timeline", []):
                apply_injection(rt, e)
        return rt


def apply_injection(rt: Runtime, entry: dict) -> None:
    """Queue one timeline entry ({tick, <kind>: value}) on the runtime."""
    at = entry["tick"]
    if "instruction" in entry:
        rt.submit_instruction(entry["instruction"], at=at)
    elif "disturbance" in entry:
        rt.inject_disturbance(Disturbance.from_doc(entry["disturbance"], at=at), at=at)
    elif "command" in entry:
        c = entry["command"]
        rt.inject_command(c["tool"], c["op"], c.get("args", {}), at=at)
    elif "schedule" in entry:
        rt.register_schedule(entry["schedule"], at=at)
    elif "register_tool" in entry:
        rt.register_tool(parse_tool_doc(entry["register_tool"]), at=at)
    else:
        raise ScenarioError(f"unknown timeline entry {entry!r}")


def bundled_scenarios() -> list[str]:
    base = resources.files("omnitask").joinpath("scenarios")
    return sorted(p.name for p in base.iterdir() if p.name.endswith(".json"))


def load_bundled(name: str) -> Scenario:
    if not name.endswith(".json"):
        name += ".json"
    text = resources.files("omnitask").joinpath("scenarios", name).read_text(encoding="utf-8")
    return Scenario.from_doc(json.loads(text))
