"""Master/agent messages as newline-delimited JSON.

In-process agents use the same message dicts, so the master loop never
depends on where an agent runs.
"""

from __future__ import annotations

import json
import math

from .errors import InvalidArgument

REQUIRED = {
    "report": ("app", "perf", "t"),
    "violation": ("app", "ratio", "t"),
    "command": ("action",),
}


def report(app: str, perf: float, t: float) -> dict:
    return {"type": "report", "app": app, "perf": float(perf), "t": float(t)}


def violation(app: str, ratio: float, t: float) -> dict:
    return {"type": "violation", "app": app, "ratio": float(ratio), "t": float(t)}


def command(action: str, **fields) -> dict:
    return {"type": "command", "action": action, **fields}


def validate(msg: dict) -> dict:
    kind = msg.get("type")
    if kind not in REQUIRED:
        raise InvalidArgument(f"unknown message type {kind!r}")
    missing = [k for k in REQUIRED[kind] if k not in msg]
    if missing:
        raise InvalidArgument(f"{kind} message missing {missing}")
    for k in ("perf", "ratio", "t"):
        if k in msg and not (isinstance(msg[k], (int, float)) and math.isfinite(msg[k])):
            raise InvalidArgument(f"{kind} message field {k} must be a finite number")
    return msg


def encode(msg: dict) -> bytes:
    return (json.dumps(validate(msg), sort_keys=True, separators=(",", ":")) + "\n").encode()


def decode_stream(data: bytes) -> list[dict]:
    """Parse every complete line; a trailing partial line is an error."""
    text = data.decode()
    if text and not text.endswith("\n"):
        raise InvalidArgument("truncated message stream")
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            out.append(validate(json.loads(line)))
        except json.JSONDecodeError as exc:
            raise InvalidArgument(f"line {n}: {exc.msg}") from exc
    return out
