"""Blocking policy-bank clients.

``PolicyBankClient`` speaks the wire protocol over TCP.  ``LocalClient``
drives a ``PolicyBank`` in-process with the same interface, for Monte Carlo
runs where socket round trips would only add latency.
"""

from __future__ import annotations

import socket
from typing import Callable

from ..errors import PolicyRejected, ProtocolError
from ..stream import Frame
from . import protocol as proto
from .server import PolicyBank

FrameCallback = Callable[[Frame], None]


class ServerError(ProtocolError):
    """The server reported an error not tied to a request."""


class TransportError(ProtocolError):
    """The connection failed or closed mid-conversation."""


class PolicyBankClient:
    def __init__(self, host: str = "127.0.0.1", port: int = 7878, timeout: float | None = 30.0):
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as e:
            raise TransportError(f"cannot connect to {host}:{port}: {e}") from e
        self._rfile = self._sock.makefile("rb")
        self._next_id = 1

    # -------------------------------------------------------------- low level

    def send(self, msg: dict) -> None:
        try:
            self._sock.sendall(proto.encode(msg))
        except OSError as e:
            raise TransportError(f"send failed: {e}") from e

    def recv(self) -> dict:
        try:
            line = self._rfile.readline()
        except OSError as e:
            raise TransportError(f"receive failed: {e}") from e
        if not line:
            raise TransportError("connection closed by server")
        return proto.parse_server(line)

    def new_request_id(self) -> int:
        rid = self._next_id
        self._next_id += 1
        return rid

    def start(self, policy: str) -> int:
        """Send an execute without waiting; returns its request id."""
        rid = self.new_request_id()
        self.send(proto.execute(policy, rid))
        return rid

    def cancel(self, request_id: int) -> None:
        self.send(proto.cancel(request_id))

    # ------------------------------------------------------------- high level

    def _unsolicited(self, msg: dict) -> None:
        if msg["type"] == "error" and msg.get("request_id") is None:
            raise ServerError(msg["message"])

    def list_policies(self) -> list[str]:
        self.send(proto.list_policies())
        while True:
            msg = self.recv()
            if msg["type"] == "policies":
                return msg["names"]
            self._unsolicited(msg)

    def wait(self, request_id: int, on_frame: FrameCallback | None = None) -> bool:
        while True:
            msg = self.recv()
            kind = msg["type"]
            if msg.get("request_id") == request_id:
                if kind == "frame":
                    if on_frame is not None:
                        on_frame(msg["frame"])
                elif kind == "done":
                    return msg["success"]
                elif kind == "error":
                    raise PolicyRejected(msg["message"])
            else:
                self._unsolicited(msg)

    def execute(self, policy: str, on_frame: FrameCallback | None = None) -> bool:
        """Run one policy to completion; frames go to ``on_frame``."""
        return self.wait(self.start(policy), on_frame)

    def observe(self) -> Frame:
        self.send(proto.observe())
        while True:
            msg = self.recv()
            if msg["type"] == "frame" and msg.get("request_id") is None:
                return msg["frame"]
            self._unsolicited(msg)

    def close(self) -> None:
        try:
            self._rfile.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class LocalClient:
    def __init__(self, bank: PolicyBank):
        self.bank = bank

    def list_policies(self) -> list[str]:
        return self.bank.names()

    def execute(self, policy: str, on_frame: FrameCallback | None = None) -> bool:
        if policy not in self.bank.policies:
            raise PolicyRejected(f"unknown policy {policy!r}")
        run = self.bank.start(policy)
        for f in run.frames(self.bank.world):
            if on_frame is not None:
                on_frame(f)
        return run.achieved

    def observe(self) -> Frame:
        return self.bank.observe()

    def close(self) -> None:
        pass
