"""Minimal JSON-over-HTTP request/response used by the remote adapters."""

from __future__ import annotations

import json
import urllib.error
import urllib.request

from .errors import AdapterError


def post_json(url: str, doc: dict, timeout: float = 30.0) -> dict:
    """POST ``doc`` as JSON and return the decoded JSON object reply."""
    body = json.dumps(doc, sort_keys=True).encode()
    req = urllib.request.Request(url, data=body, method="POST",
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            raw = resp.read()
    except (urllib.error.URLError, OSError) as exc:
        raise AdapterError(f"request to {url} failed: {exc}") from None
    try:
        out = json.loads(raw)
    except ValueError:
        raise AdapterError(f"non-JSON reply from {url}") from None
    if not isinstance(out, dict):
        raise AdapterError(f"reply from {url} is not an object")
    return out


class RemoteCaptioner:
    """Sends frames + prompt, expects {"text": ...}."""

    def __init__(self, url: str, prompt: str = "Describe what happened in these frames.", timeout: float = 30.0):
        self.url, self.prompt, self.timeout = url, prompt, timeout

    def caption(self, frames) -> str:
        doc = {"prompt": self.prompt, "frames": [frame_doc(f) for f in frames]}
        text = post_json(self.url, doc, self.timeout).get("text")
        if not isinstance(text, str) or not text:
            raise AdapterError("caption reply lacks text")
        return text


def frame_doc(frame) -> dict:
    return {
        "frame_index": frame.frame_index,
        "time": frame.time,
        "camera_id": frame.camera_id,
        "rooms": list(frame.rooms),
        "observations": [
            {"object_id": o.object_id, "class": o.cls, "attrs": dict(o.attrs), "room": o.room,
             "position": list(o.position) if o.position else None}
            for o in frame.observations
        ],
        "audio": [list(a) for a in frame.audio],
    }
