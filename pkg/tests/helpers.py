"""Shared builders for tests: small worlds, frames and random task streams."""

from __future__ import annotations

import json
import random
import threading
from contextlib import contextmanager
from http.server import BaseHTTPRequestHandler, HTTPServer

from omnitask.memory import Observation
from omnitask.perception import Frame
from omnitask.scenario import Scenario


def furniture(id, cls, room):
    return {"id": id, "class": cls, "room": room, "fixed": True}


def item(id, cls, room, on=None, **attrs):
    d = {"id": id, "class": cls, "room": room}
    if on:
        d["position"] = ["on", on]
    if attrs:
        d["attrs"] = attrs
    return d


def small_world(robot_room="office", watched=("office",), extra=()):
    return {
        "rooms": ["lab", "office"],
        "watched_rooms": list(watched),
        "objects": [
            furniture("office_desk", "desk", "office"),
            furniture("trash_can", "trash_can", "office"),
            furniture("lab_table", "table", "lab"),
            furniture("lab_cabinet", "cabinet", "lab"),
            {"id": "humidifier", "class": "humidifier", "room": "office", "fixed": True,
             "attrs": {"power": "on"}},
            *extra,
        ],
        "robot": {"room": robot_room},
        "knowledge": {"weather": "cloudy"},
    }


HUMID_SCRIPT = {"match": "humid", "label": "humidifier_off",
                "steps": [{"tool": "iot", "op": "set_device", "args": {"device": "humidifier", "power": "off"}}],
                "postcondition": {"attr": ["humidifier", "power", "off"]}}


def scenario(world=None, timeline=(), instructions=(HUMID_SCRIPT,), proposals=(), horizon=60, **extra):
    doc = {"name": "t", "seed": 42, "horizon": horizon, "world": world or small_world(),
           "scripts": {"instructions": list(instructions), "proposals": list(proposals)},
           "timeline": list(timeline)}
    doc.update(extra)
    return Scenario.from_doc(doc)


def frame(i, observations=(), rooms=("office",), audio=()):
    return Frame(i, i, "main", tuple(observations), tuple(rooms), tuple(audio))


def obs(oid, cls, room="office", on=None, **attrs):
    return Observation.make(oid, cls, attrs, room, ("on", on) if on else None)


# -- random task streams ----------------------------------------------------------

_NAV = {"tool": "navigation", "op": "navigate"}
STREAM_SCRIPTS = [
    {"match": "carefully", "label": "careful_trip", "interruptible": False,
     "steps": [dict(_NAV, args={"target": "kitchen_counter"})]},
    {"match": "lab table", "label": "to_lab", "steps": [dict(_NAV, args={"target": "lab_table"})]},
    {"match": "office desk", "label": "to_office", "steps": [dict(_NAV, args={"target": "office_desk"})]},
    {"match": "kitchen", "label": "to_kitchen", "steps": [dict(_NAV, args={"target": "kitchen_counter"})]},
    {"match": "photograph", "label": "photo",
     "steps": [dict(_NAV, args={"target": "lab_table"}),
               {"tool": "manipulation", "op": "photo", "args": {"target": "document"}}]},
    {"match": "lamp on", "label": "lamp_on",
     "steps": [{"tool": "iot", "op": "set_device", "args": {"device": "lamp", "power": "on"}}]},
    {"match": "lamp off", "label": "lamp_off",
     "steps": [{"tool": "iot", "op": "set_device", "args": {"device": "lamp", "power": "off"}}]},
    {"match": "look up", "label": "lookup", "steps": [{"tool": "web", "op": "query", "args": {"topic": "weather"}}]},
    {"match": "remind", "label": "reminder", "schedule": {"after": 7},
     "steps": [{"tool": "speaker", "op": "say", "args": {"text": "reminder"}}]},
]
STREAM_PHRASES = ["Go to the lab table", "Go to the office desk", "Go to the kitchen", "Photograph the document",
                  "Lamp on", "Lamp off", "Look up the weather", "Remind me", "Carefully go over there",
                  "Say hello"]
STREAM_CUES = ["", "", "", " now", " hurry", " fire"]
PICKUP_RULE = {"match": {"class": "scrap_paper", "relation": "on", "support_class": "desk"},
               "category": "clean_debris", "label": "pickup", "description": "pick up the {object}",
               "steps": [dict(_NAV, args={"target": "{support}"}),
                         {"tool": "manipulation", "op": "grasp", "args": {"object": "{object}"}}],
               "postcondition": {"held": "{object}"}}


def stream_doc(seed: int, n_tasks: int, disturbances: int = 0) -> dict:
    """A scenario with ``n_tasks`` random instructions arriving at random ticks."""
    rng = random.Random(seed)
    timeline = []
    t = 1
    for _ in range(n_tasks):
        t += rng.choice([0, 0, 1, 2, 3, 5, 8])
        timeline.append({"tick": t, "instruction": rng.choice(STREAM_PHRASES) + rng.choice(STREAM_CUES)})
    for k in range(disturbances):
        at = rng.randint(1, t + 1)
        timeline.append({"tick": at, "disturbance": {"add": item(f"scrap_{k}", "scrap_paper", "office",
                                                                  on="office_desk")}})
    timeline.sort(key=lambda e: e["tick"])
    return {
        "name": f"stream_{seed}", "seed": seed, "horizon": 100000, "stop_at_quiescence": True,
        "world": {
            "rooms": ["lab", "office", "kitchen"],
            "adjacency": [["lab", "office"], ["office", "kitchen"]],
            "watched_rooms": ["office"],
            "objects": [
                furniture("lab_table", "table", "lab"),
                furniture("office_desk", "desk", "office"),
                furniture("kitchen_counter", "counter", "kitchen"),
                item("document", "document", "lab", on="lab_table"),
                {"id": "lamp", "class": "lamp", "room": "office", "fixed": True, "attrs": {"power": "off"}},
            ],
            "robot": {"room": "office"},
            "knowledge": {"weather": "rain"},
        },
        "scripts": {"instructions": STREAM_SCRIPTS, "proposals": [PICKUP_RULE]},
        "timeline": timeline,
    }


# -- a throwaway JSON endpoint for the remote adapters ------------------------------

@contextmanager
def json_server(reply):
    """Serve POSTs on localhost; ``reply(doc)`` returns the JSON object to send back."""
    seen = []

    class Handler(BaseHTTPRequestHandler):
        def do_POST(self):
            doc = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            seen.append(doc)
            body = json.dumps(reply(doc)).encode()
            self.send_response(200)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def log_message(self, *args):
            pass

    server = HTTPServer(("127.0.0.1", 0), Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    try:
        yield f"http://127.0.0.1:{server.server_port}/", seen
    finally:
        server.shutdown()
        server.server_close()
