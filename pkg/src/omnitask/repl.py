"""Line-oriented console over a runtime.

Every command that changes state is turned into a queued injection for the
next tick, so a recorded transcript replays to the same trace.
"""

from __future__ import annotations

import json
import shlex
from typing import Iterable, TextIO

from .errors import OmnitaskError
from .runtime import Runtime
from .scenario import parse_tool_doc
from .tasks import SPLITS
from .world import Disturbance

USAGE = """commands:
  step N                 advance N ticks
  say "<instruction>"    deliver an instruction next tick
  disturb <json>         e.g. disturb {"set_attr": {"object": "cup", "attrs": {"knocked_over": true}}}
  register-tool <file>   register a tool from a JSON tool document
  schedule <json>        register a timer task, e.g. {"label": "x", "schedule": {"after": 5}, "steps": [...]}
  dump tasks|graph|history
  quit"""


def dump_lines(rt: Runtime, what: str) -> list[str]:
    if what == "tasks":
        snap = rt.mem.snapshot(rt.clock)
        lines = [json.dumps({"split": s, "ids": snap.ids(s)}) for s in SPLITS]
        return lines + [json.dumps(r, sort_keys=True) for r in snap.records()]
    if what == "graph":
        return rt.graph.dump_lines()
    if what == "history":
        return rt.history.dump_lines()
    raise ValueError(what)


class Repl:
    def __init__(self, runtime: Runtime, out: TextIO):
        self.rt = runtime
        self.out = out
        self.transcript: list[str] = []
        self.done = False

    def _say(self, text: str) -> None:
        self.out.write(text + "\n")

    def execute(self, line: str) -> bool:
        """Run one command line; returns False if it was rejected (state untouched)."""
        line = line.strip()
        if not line or line.startswith("#"):
            return True
        word, _, rest = line.partition(" ")
        rest = rest.strip()
        try:
            if word == "step":
                n = int(rest)
                if n < 0:
                    raise ValueError("step count must be >= 0")
                events = self.rt.advance(n)
                self._say(f"t={self.rt.clock} (+{len(events)} events)")
            elif word == "say":
                parts = shlex.split(rest)
                if len(parts) != 1:
                    raise ValueError('usage: say "<instruction>"')
                tid = self.rt.submit_instruction(parts[0])
                self._say(f"queued {tid} for t={self.rt.clock + 1}")
            elif word == "disturb":
                d = Disturbance.from_doc(json.loads(rest), at=self.rt.clock + 1)
                oid = d.params.get("object") if d.kind != "add" else None
                if oid is not None and oid not in self.rt.world.objects:
                    raise ValueError(f"unknown object {oid!r}")
                self.rt.inject_disturbance(d)
                self._say(f"disturbance queued for t={self.rt.clock + 1}")
            elif word == "register-tool":
                with open(rest, encoding="utf-8") as fh:
                    spec = parse_tool_doc(json.load(fh))
                self.rt.register_tool(spec)
                self._say(f"tool {spec.name} queued for t={self.rt.clock + 1}")
            elif word == "schedule":
                tid = self.rt.register_schedule(json.loads(rest))
                self._say(f"scheduled {tid}")
            elif word == "dump":
                if rest not in ("tasks", "graph", "history"):
                    raise ValueError("usage: dump tasks|graph|history")
                for ln in dump_lines(self.rt, rest):
                    self._say(ln)
                return True
            elif word == "quit":
                self.done = True
                return True
            else:
                self._say(f"unknown command {word!r}\n{USAGE}")
                return False
        except (OmnitaskError, ValueError, OSError) as exc:
            self._say(f"error: {exc}")
            return False
        self.transcript.append(line)
        return True

    def run(self, lines: Iterable[str], prompt: str = "") -> None:
        for line in lines:
            if prompt:
                self.out.write(prompt)
            self.execute(line)
            if self.done:
                break
