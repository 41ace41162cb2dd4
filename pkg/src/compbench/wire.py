"""Framed teleop protocol: one JSON object per text frame.

Client to server: hello, input, clutch, mode_toggle. Server to client:
state, haptic, error. parse_message validates shape strictly — a frame
either decodes to a clean dict or raises WireError with a code the server
can echo back before closing.
"""
from __future__ import annotations

import json
import math

MESSAGE_TYPES = ("hello", "input", "clutch", "mode_toggle",
                 "state", "haptic", "error")

# required payload fields (beyond "type") per message type
_FIELDS = {
    "hello": ("arm", "protocol"),
    "input": ("seq", "t_ms", "pos", "quat", "trigger", "buttons"),
    "clutch": ("seq", "t_ms"),
    "mode_toggle": ("seq", "t_ms"),
    "state": ("t", "ee_pos", "ee_quat", "wrench", "gripper", "mode",
              "haptic", "clutch"),
    "haptic": ("t", "intensity"),
    "error": ("code", "message"),
}

PROTOCOL_VERSION = 1


class WireError(ValueError):
    def __init__(self, code: str, message: str):
        super().__init__(message)
        self.code = code


def _vector(msg, key, n):
    v = msg[key]
    if (not isinstance(v, list) or len(v) != n
            or not all(isinstance(x, (int, float)) and math.isfinite(x)
                       for x in v)):
        raise WireError("bad_field", f"{key} must be {n} finite numbers")
    return [float(x) for x in v]


def _number(msg, key, lo=None, hi=None):
    v = msg[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise WireError("bad_field", f"{key} must be a number")
    if not math.isfinite(v):
        raise WireError("bad_field", f"{key} must be finite")
    if lo is not None and not (lo <= v <= hi):
        raise WireError("bad_field", f"{key} out of range [{lo}, {hi}]")
    return float(v)


def parse_message(text: str | bytes) -> dict:
    """Decode and validate one frame. Raises WireError on anything off."""
    try:
        msg = json.loads(text)
    except (ValueError, UnicodeDecodeError) as exc:
        raise WireError("bad_json", f"frame is not valid JSON: {exc}")
    if not isinstance(msg, dict):
        raise WireError("bad_json", "frame must be a JSON object")
    mtype = msg.get("type")
    if mtype not in MESSAGE_TYPES:
        raise WireError("bad_type", f"unknown message type {mtype!r}")
    missing = [f for f in _FIELDS[mtype] if f not in msg]
    if missing:
        raise WireError("missing_field",
                        f"{mtype} frame missing {', '.join(missing)}")

    if mtype == "hello":
        if not isinstance(msg["arm"], str) or not msg["arm"]:
            raise WireError("bad_field", "arm must be a non-empty string")
        if msg["protocol"] != PROTOCOL_VERSION:
            raise WireError("bad_protocol",
                            f"protocol {msg['protocol']!r} unsupported; "
                            f"want {PROTOCOL_VERSION}")
    elif mtype == "input":
        _number(msg, "seq")
        _number(msg, "t_ms")
        msg["pos"] = _vector(msg, "pos", 3)
        quat = _vector(msg, "quat", 4)
        norm = math.sqrt(sum(x * x for x in quat))
        if abs(norm - 1.0) > 1e-3:
            raise WireError("bad_field", "quat must be unit length")
        msg["quat"] = quat
        msg["trigger"] = min(1.0, max(0.0, _number(msg, "trigger")))
        buttons = msg["buttons"]
        if (not isinstance(buttons, dict)
                or not all(isinstance(buttons.get(k), bool)
                           for k in ("menu", "grip"))):
            raise WireError("bad_field",
                            "buttons must carry boolean menu and grip")
    elif mtype in ("clutch", "mode_toggle"):
        _number(msg, "seq")
        _number(msg, "t_ms")
    elif mtype == "state":
        msg["ee_pos"] = _vector(msg, "ee_pos", 3)
        msg["ee_quat"] = _vector(msg, "ee_quat", 4)
        msg["wrench"] = _vector(msg, "wrench", 6)
        _number(msg, "gripper", 0.0, 1.0)
        _number(msg, "haptic", 0.0, 1.0)
        if msg["mode"] not in ("low", "mid", "high"):
            raise WireError("bad_field", "mode must be low|mid|high")
        if not isinstance(msg["clutch"], bool):
            raise WireError("bad_field", "clutch must be boolean")
    elif mtype == "haptic":
        _number(msg, "intensity", 0.0, 1.0)
    elif mtype == "error":
        if not isinstance(msg["code"], str) or not isinstance(
                msg["message"], str):
            raise WireError("bad_field", "code and message must be strings")
    return msg


def encode(msg: dict) -> str:
    """Validate an outgoing frame through the same gate, then serialize."""
    text = json.dumps(msg)
    parse_message(text)
    return text


def state_message(t: float, ee_pos, ee_quat, wrench, gripper: float,
                  mode: str, haptic: float, clutch: bool) -> str:
    return encode({
        "type": "state", "t": float(t),
        "ee_pos": [float(x) for x in ee_pos],
        "ee_quat": [float(x) for x in ee_quat],
        "wrench": [float(x) for x in wrench],
        "gripper": float(gripper), "mode": mode,
        "haptic": float(haptic), "clutch": bool(clutch),
    })


def error_message(code: str, message: str) -> str:
    return encode({"type": "error", "code": code, "message": message})
