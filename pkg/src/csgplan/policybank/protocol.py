"""Policy-bank wire format.

One JSON object per line (UTF-8, ``\\n`` terminated), encoded with sorted
keys and no insignificant whitespace.  Every record has a ``type`` field.

Client to server::

    {"type":"list_policies"}
    {"type":"execute","policy":<str>,"request_id":<int>}
    {"type":"cancel","request_id":<int>}
    {"type":"observe"}

Server to client::

    {"type":"policies","names":[<str>,...]}
    {"type":"frame","request_id":<int|null>,"frame":<frame record>}
    {"type":"done","request_id":<int>,"success":<bool>}
    {"type":"error","message":<str>,"request_id":<int|null>}

``observe`` renders the current world once; the reply is a ``frame`` with a
null request id.  Frame records use the scene-stream schema.
"""

from __future__ import annotations

import json

from ..errors import ProtocolError, CsgError
from ..stream import Frame, frame_from_dict, frame_to_dict

CLIENT_TYPES = {"list_policies", "execute", "cancel", "observe"}
SERVER_TYPES = {"policies", "frame", "done", "error"}


def encode(msg: dict) -> bytes:
    return (json.dumps(msg, sort_keys=True, separators=(",", ":")) + "\n").encode("utf-8")


def _load(line: bytes | str) -> dict:
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ProtocolError(f"record is not UTF-8: {e}") from None
    try:
        msg = json.loads(line)
    except json.JSONDecodeError as e:
        raise ProtocolError(f"malformed record: {e.msg} at column {e.colno}") from None
    if not isinstance(msg, dict) or not isinstance(msg.get("type"), str):
        raise ProtocolError("record must be an object with a string 'type'")
    return msg


def _req_id(msg: dict, nullable: bool = False):
    rid = msg.get("request_id")
    if rid is None and nullable:
        return None
    if not isinstance(rid, int) or isinstance(rid, bool):
        raise ProtocolError(f"{msg['type']}: request_id must be an integer")
    return rid


def parse_client(line: bytes | str) -> dict:
    msg = _load(line)
    kind = msg["type"]
    if kind not in CLIENT_TYPES:
        raise ProtocolError(f"unknown message type {kind!r}")
    if kind == "execute":
        if not isinstance(msg.get("policy"), str):
            raise ProtocolError("execute: policy must be a string")
        _req_id(msg)
    elif kind == "cancel":
        _req_id(msg)
    return msg


def parse_server(line: bytes | str) -> dict:
    msg = _load(line)
    kind = msg["type"]
    if kind not in SERVER_TYPES:
        raise ProtocolError(f"unknown message type {kind!r}")
    if kind == "policies":
        names = msg.get("names")
        if not isinstance(names, list) or not all(isinstance(n, str) for n in names):
            raise ProtocolError("policies: names must be a list of strings")
    elif kind == "frame":
        _req_id(msg, nullable=True)
        try:
            msg["frame"] = frame_from_dict(msg.get("frame"))
        except (CsgError, TypeError, AttributeError) as e:
            raise ProtocolError(f"frame: {e}") from None
    elif kind == "done":
        _req_id(msg)
        if not isinstance(msg.get("success"), bool):
            raise ProtocolError("done: success must be a boolean")
    else:
        if not isinstance(msg.get("message"), str):
            raise ProtocolError("error: message must be a string")
        _req_id(msg, nullable=True)
    return msg


def list_policies() -> dict:
    return {"type": "list_policies"}


def execute(policy: str, request_id: int) -> dict:
    return {"type": "execute", "policy": policy, "request_id": request_id}


def cancel(request_id: int) -> dict:
    return {"type": "cancel", "request_id": request_id}


def observe() -> dict:
    return {"type": "observe"}


def policies(names) -> dict:
    return {"type": "policies", "names": list(names)}


def frame(request_id: int | None, f: Frame) -> dict:
    return {"type": "frame", "request_id": request_id, "frame": frame_to_dict(f)}


def done(request_id: int, success: bool) -> dict:
    return {"type": "done", "request_id": request_id, "success": success}


def error(message: str, request_id: int | None = None) -> dict:
    return {"type": "error", "message": message, "request_id": request_id}
