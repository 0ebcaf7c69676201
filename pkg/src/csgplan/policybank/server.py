"""Policy bank: preloaded policies over a simulated world, served over TCP.

The server accepts one session at a time; a second concurrent client gets an
error record and is disconnected.  Within a session, command reading and
frame streaming run as separate tasks, so a ``cancel`` or a superseding
``execute`` is seen while a motion is streaming.
"""

from __future__ import annotations

import asyncio
import logging
import threading
from typing import Iterable

from ..errors import CsgError, ProtocolError, ValidationError
from ..stream import Frame
from . import protocol as proto
from .world import PolicyRun, PolicySpec, WorldState

log = logging.getLogger(__name__)


class UnknownPolicy(CsgError):
    pass


class PolicyBank:
    """All policies are validated and held in memory when the bank is built."""

    def __init__(self, world: WorldState, policies: Iterable[PolicySpec], retreat_frames: int = 20):
        self.world = world
        self.retreat_frames = retreat_frames
        self.policies: dict[str, PolicySpec] = {}
        for p in policies:
            if p.name in self.policies:
                raise ValidationError("policies", f"duplicate policy name {p.name!r}")
            self.policies[p.name] = p

    def names(self) -> list[str]:
        return list(self.policies)

    def start(self, name: str) -> PolicyRun:
        policy = self.policies.get(name)
        if policy is None:
            raise UnknownPolicy(f"unknown policy {name!r}")
        return PolicyRun(self.world, policy, self.retreat_frames)

    def observe(self) -> Frame:
        return self.world.render()


class _Running:
    __slots__ = ("request_id", "task", "finished")

    def __init__(self, request_id: int):
        self.request_id = request_id
        self.task: asyncio.Task | None = None
        self.finished = False


class PolicyBankServer:
    def __init__(self, bank: PolicyBank, host: str = "127.0.0.1", port: int = 0, frame_interval: float = 0.0):
        self.bank = bank
        self.host = host
        self.port = port
        self.frame_interval = frame_interval
        self._server: asyncio.AbstractServer | None = None
        self._busy = False
        self._sessions: set[asyncio.Task] = set()

    async def start(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host, self.port)
        self.port = self._server.sockets[0].getsockname()[1]
        log.info("policy bank listening on %s:%d with %d policies", self.host, self.port, len(self.bank.policies))

    async def serve_forever(self) -> None:
        if self._server is None:
            await self.start()
        async with self._server:
            await self._server.serve_forever()

    async def close(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
        for t in list(self._sessions):
            t.cancel()
        for t in list(self._sessions):
            try:
                await t
            except (asyncio.CancelledError, Exception):
                pass

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        # Tracked until fully closed so close() can wait for every handler.
        task = asyncio.current_task()
        self._sessions.add(task)
        try:
            if self._busy:
                writer.write(proto.encode(proto.error("server busy: one connection at a time")))
                return
            self._busy = True
            try:
                await self._session(reader, writer)
            except (ConnectionError, asyncio.IncompleteReadError):
                log.info("client disconnected")
            finally:
                self._busy = False
        finally:
            try:
                await _close(writer)
            finally:
                self._sessions.discard(task)

    async def _session(self, reader, writer) -> None:
        running: _Running | None = None
        last_id: int | None = None

        def send(msg):
            writer.write(proto.encode(msg))

        async def preempt(run: _Running):
            if run.finished:
                return
            run.task.cancel()
            try:
                await run.task
            except asyncio.CancelledError:
                pass
            if not run.finished:
                run.finished = True
                send(proto.done(run.request_id, False))
                await writer.drain()

        try:
            while True:
                try:
                    line = await reader.readline()
                except (ValueError, asyncio.LimitOverrunError):
                    send(proto.error("malformed record: line too long"))
                    return
                if not line:
                    return
                if not line.strip():
                    continue
                try:
                    msg = proto.parse_client(line)
                except ProtocolError as e:
                    send(proto.error(str(e)))
                    await writer.drain()
                    return
                kind = msg["type"]
                if kind == "list_policies":
                    send(proto.policies(self.bank.names()))
                elif kind == "observe":
                    send(proto.frame(None, self.bank.observe()))
                elif kind == "cancel":
                    rid = msg["request_id"]
                    if running is not None and running.request_id == rid and not running.finished:
                        await preempt(running)
                    else:
                        send(proto.error(f"no running request {rid}", rid))
                else:
                    rid = msg["request_id"]
                    if last_id is not None and rid <= last_id:
                        send(proto.error(f"request_id {rid} does not increase past {last_id}", rid))
                        await writer.drain()
                        continue
                    last_id = rid
                    try:
                        run = self.bank.start(msg["policy"])
                    except UnknownPolicy as e:
                        send(proto.error(str(e), rid))
                        await writer.drain()
                        continue
                    if running is not None:
                        await preempt(running)
                    running = _Running(rid)
                    running.task = asyncio.create_task(self._stream(run, running, writer))
                await writer.drain()
        finally:
            if running is not None and running.task is not None and not running.finished:
                running.task.cancel()
                try:
                    await running.task
                except (asyncio.CancelledError, Exception):
                    pass

    async def _stream(self, run: PolicyRun, state: _Running, writer) -> None:
        world = self.bank.world
        for f in run.frames(world):
            writer.write(proto.encode(proto.frame(state.request_id, f)))
            await writer.drain()
            # Yield even at zero interval so commands are read mid-motion.
            await asyncio.sleep(self.frame_interval)
        writer.write(proto.encode(proto.done(state.request_id, run.achieved)))
        state.finished = True
        await writer.drain()


async def _close(writer) -> None:
    try:
        writer.close()
        await writer.wait_closed()
    except (ConnectionError, OSError):
        pass


def serve(bank: PolicyBank, host: str = "127.0.0.1", port: int = 0, frame_interval: float = 0.0) -> None:
    """Run the server in the foreground until interrupted."""

    async def main():
        server = PolicyBankServer(bank, host, port, frame_interval)
        await server.start()
        print(f"policy bank listening on {host}:{server.port}", flush=True)
        await server.serve_forever()

    asyncio.run(main())


class ServerThread:
    """Server on a background event loop; for tests and in-process use."""

    def __init__(self, bank: PolicyBank, host: str = "127.0.0.1", port: int = 0, frame_interval: float = 0.0):
        self.server = PolicyBankServer(bank, host, port, frame_interval)
        self._loop = asyncio.new_event_loop()
        self._thread = threading.Thread(target=self._run, name="policy-bank", daemon=True)
        self._ready = threading.Event()
        self._error: BaseException | None = None

    @property
    def port(self) -> int:
        return self.server.port

    @property
    def host(self) -> str:
        return self.server.host

    def _run(self):
        asyncio.set_event_loop(self._loop)
        try:
            self._loop.run_until_complete(self.server.start())
        except BaseException as e:  # surfaced by start()
            self._error = e
            self._ready.set()
            return
        self._ready.set()
        self._loop.run_forever()
        self._loop.run_until_complete(self.server.close())
        self._loop.close()

    def start(self) -> "ServerThread":
        self._thread.start()
        self._ready.wait()
        if self._error is not None:
            raise self._error
        return self

    def stop(self) -> None:
        if self._thread.is_alive():
            self._loop.call_soon_threadsafe(self._loop.stop)
            self._thread.join(timeout=10)

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()
