"""Launch and supervise native plugins as external child processes.

A native plugin runs as a shim child (``hub shim --spec ... --connect ...
--token ...``) that connects back over the wire protocol and performs the
documented hello/auth/iface handshake; any external program implementing
that handshake works the same way. The supervisor matches an arriving
plugin session to its pending launch (by launch id when the child echoes
one, else by plugin name in launch order), tracks handle state
(provisioning -> launching -> ready -> failed/terminated), captures child
stdout/stderr into a bounded log ring, and force-kills after a grace
period on terminate. A ready child that dies unexpectedly is restarted up
to the configured limit.
"""

from __future__ import annotations

import asyncio
import logging
import uuid
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Awaitable, Callable

from ..errors import AuthFailed, ReadyTimeout, SpawnError
from ..pluginfile import PLUGIN_FILE_EXT, ResolvedPlugin, serialize_plugin_file
from ..rpc.session import Session

logger = logging.getLogger(__name__)

LOG_RING_CAPACITY = 1000

STATE_PROVISIONING = "provisioning"
STATE_LAUNCHING = "launching"
STATE_READY = "ready"
STATE_FAILED = "failed"
STATE_TERMINATED = "terminated"


@dataclass
class PluginHandle:
    plugin_id: str
    workspace: str
    state: str = STATE_PROVISIONING
    engine: str = "local"
    restart_count: int = 0
    log_ring: deque = field(default_factory=lambda: deque(maxlen=LOG_RING_CAPACITY))
    launch_id: str = ""
    process: asyncio.subprocess.Process | None = None
    session: Session | None = None

    def log(self, level: str, text: str) -> None:
        self.log_ring.append((level, text))


@dataclass
class _PendingLaunch:
    handle: PluginHandle
    ready: asyncio.Future
    resolved: ResolvedPlugin


class NativeSupervisor:
    """Spawns shim children and supervises their lifecycle."""

    def __init__(
        self,
        *,
        run_dir: Path,
        shim_command: list[str],
        token: str | None = None,
        ready_timeout: float = 30.0,
        kill_grace: float = 5.0,
        restart_limit: int = 0,
    ):
        self.run_dir = run_dir
        self.shim_command = shim_command
        self.token = token
        self.ready_timeout = ready_timeout
        self.kill_grace = kill_grace
        self.restart_limit = restart_limit
        self.connect_addr: str | None = None  # set once the hub listener is up
        self.handles: dict[tuple[str, str], PluginHandle] = {}
        self._pending: dict[str, _PendingLaunch] = {}  # launch_id -> launch
        self._monitors: set[asyncio.Task] = set()
        # invoked when a ready child exits unexpectedly and a restart is due
        self.on_restart: Callable[[PluginHandle, ResolvedPlugin], Awaitable[None]] | None = None

    # -- launching -----------------------------------------------------------

    async def launch(self, resolved: ResolvedPlugin, workspace: str) -> PluginHandle:
        """Spawn the shim and wait until its session reaches ready."""
        if self.connect_addr is None:
            raise SpawnError("the hub endpoint is not listening yet")
        handle = PluginHandle(
            plugin_id=resolved.spec.name,
            workspace=workspace,
            state=STATE_LAUNCHING,
            launch_id=uuid.uuid4().hex,
        )
        self.handles[(workspace, resolved.spec.name)] = handle
        await self._spawn(handle, resolved)
        return handle

    async def _spawn(self, handle: PluginHandle, resolved: ResolvedPlugin) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        spec_file = self.run_dir / f"{handle.workspace}--{handle.plugin_id}{PLUGIN_FILE_EXT}"
        spec_file.write_text(
            resolved.spec.raw_source or serialize_plugin_file(resolved.spec), "utf-8"
        )
        argv = list(self.shim_command) + [
            "--spec",
            str(spec_file),
            "--connect",
            self.connect_addr,
            "--launch-id",
            handle.launch_id,
        ]
        if self.token is not None:
            argv += ["--token", self.token]

        ready: asyncio.Future = asyncio.get_running_loop().create_future()
        self._pending[handle.launch_id] = _PendingLaunch(handle, ready, resolved)
        try:
            process = await asyncio.create_subprocess_exec(
                *argv,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.PIPE,
            )
        except OSError as e:
            self._pending.pop(handle.launch_id, None)
            handle.state = STATE_FAILED
            raise SpawnError(f"spawning {argv[0]!r}: {e}") from e
        handle.process = process
        self._watch(self._pipe_to_ring(handle, process.stdout, "stdout"))
        self._watch(self._pipe_to_ring(handle, process.stderr, "stderr"))
        self._watch(self._monitor_exit(handle, resolved))
        try:
            await asyncio.wait_for(ready, self.ready_timeout)
        except asyncio.TimeoutError:
            self._pending.pop(handle.launch_id, None)
            await self.terminate(handle, "ready timeout")
            handle.state = STATE_FAILED
            raise ReadyTimeout(
                f"{handle.plugin_id} did not complete its handshake within "
                f"{self.ready_timeout}s"
            ) from None

    def _watch(self, coro) -> None:
        task = asyncio.get_running_loop().create_task(coro)
        self._monitors.add(task)
        task.add_done_callback(self._monitors.discard)

    async def _pipe_to_ring(self, handle: PluginHandle, stream, level: str) -> None:
        if stream is None:
            return
        while True:
            line = await stream.readline()
            if not line:
                return
            handle.log(level, line.decode("utf-8", errors="replace").rstrip("\n"))

    async def _monitor_exit(self, handle: PluginHandle, resolved: ResolvedPlugin) -> None:
        process = handle.process
        if process is None:
            return
        code = await process.wait()
        pending = self._pending.pop(handle.launch_id, None)
        if pending is not None and not pending.ready.done():
            pending.ready.set_exception(
                SpawnError(f"{handle.plugin_id} exited with code {code} before its handshake")
            )
            handle.state = STATE_FAILED
            return
        if handle.state == STATE_TERMINATED:
            return
        if handle.state == STATE_READY:
            handle.log("supervisor", f"process exited unexpectedly with code {code}")
            handle.state = STATE_FAILED
            if handle.session is not None:
                await handle.session.close()
            if handle.restart_count < self.restart_limit and self.on_restart is not None:
                handle.restart_count += 1
                handle.state = STATE_LAUNCHING
                try:
                    await self._spawn(handle, resolved)
                    await self.on_restart(handle, resolved)
                except Exception as e:
                    logger.warning("restart of %s failed: %s", handle.plugin_id, e)
                    handle.state = STATE_FAILED

    # -- session matching ----------------------------------------------------

    def match_launch(self, launch_id: str | None, plugin_id: str) -> _PendingLaunch | None:
        """Find the pending launch for an arriving plugin session."""
        if launch_id is not None:
            return self._pending.get(launch_id)
        for pending in self._pending.values():
            if pending.handle.plugin_id == plugin_id:
                return pending
        return None

    def mark_ready(self, pending: _PendingLaunch, session: Session) -> PluginHandle:
        handle = pending.handle
        handle.session = session
        handle.state = STATE_READY
        self._pending.pop(handle.launch_id, None)
        if not pending.ready.done():
            pending.ready.set_result(None)
        return handle

    def fail_launch(self, launch_id: str, error: Exception) -> None:
        pending = self._pending.pop(launch_id, None)
        if pending is not None:
            pending.handle.state = STATE_FAILED
            if not pending.ready.done():
                pending.ready.set_exception(error)

    def fail_auth(self, launch_id: str) -> None:
        self.fail_launch(launch_id, AuthFailed("child presented a bad token"))

    # -- termination ---------------------------------------------------------

    async def terminate(self, handle: PluginHandle, reason: str = "") -> None:
        """Stop the child: signal, grace period, then force kill. Idempotent."""
        if handle.state == STATE_TERMINATED:
            return
        handle.state = STATE_TERMINATED
        handle.log("supervisor", f"terminating: {reason or 'requested'}")
        process = handle.process
        if process is not None and process.returncode is None:
            try:
                process.terminate()
            except ProcessLookupError:
                pass
            try:
                await asyncio.wait_for(process.wait(), self.kill_grace)
            except asyncio.TimeoutError:
                try:
                    process.kill()
                except ProcessLookupError:
                    pass
                await process.wait()
        if handle.session is not None:
            await handle.session.close()

    async def terminate_all(self) -> None:
        for handle in list(self.handles.values()):
            await self.terminate(handle, "hub shutdown")
        for task in list(self._monitors):
            task.cancel()
        for task in list(self._monitors):
            try:
                await task
            except (asyncio.CancelledError, Exception):
                pass
