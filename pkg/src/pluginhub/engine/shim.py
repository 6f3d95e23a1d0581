"""Child-process plugin host: runs one plugin spec and dials back to the hub.

The shim reads a plugin document, parses its script, connects to the hub
endpoint, performs the hello/auth/iface handshake and then serves
invocations of the script's functions. Cross-plugin calls made by the
script travel back over the same session, so a native plugin is
indistinguishable from an in-process worker to its callers.
"""

from __future__ import annotations

import asyncio
from pathlib import Path

from ..errors import NoSuchPlugin
from ..pluginfile import parse_plugin_file
from ..rpc.messages import Call, Iface, Log, Progress
from ..rpc.session import Session, open_tcp_session
from ..script import instantiate, parse_script


class SessionBridge:
    """Bridge for shim-hosted plugins: everything rides the hub session."""

    def __init__(self, session: Session, plugin_id: str):
        self.session = session
        self.plugin_id = plugin_id

    async def call(self, target: str, method: str, args: list) -> object:
        return await self.session.call_remote(target, method, args)

    async def emit_log(self, level: str, text: str) -> None:
        await self.session.send(Log(plugin_id=self.plugin_id, level=level, text=text))

    async def emit_progress(self, fraction: float) -> None:
        fraction = min(1.0, max(0.0, float(fraction)))
        await self.session.send(Progress(plugin_id=self.plugin_id, fraction=fraction))


def _parse_addr(addr: str) -> tuple[str, int]:
    host, _, port = addr.rpartition(":")
    return host or "127.0.0.1", int(port)


async def run_shim(
    spec_path: str,
    connect: str,
    token: str | None = None,
    launch_id: str | None = None,
) -> None:
    """Run one plugin as a child process until the hub hangs up."""
    source = Path(spec_path).read_text("utf-8")
    spec = parse_plugin_file(source)
    program = parse_script(spec.code_sections.get("script", ""))

    host, port = _parse_addr(connect)
    session = await open_tcp_session(
        host, port, role="plugin", token=token, launch_id=launch_id
    )
    instance = instantiate(program, SessionBridge(session, spec.name), plugin_id=spec.name)

    async def handler(_session: Session, call: Call) -> object:
        if call.target != spec.name:
            raise NoSuchPlugin(f"this process hosts {spec.name!r}, not {call.target!r}")
        return await instance.invoke(call.method, call.args)

    session.call_handler = handler
    await session.send(Iface(plugin_id=spec.name, methods=instance.methods))
    await session.wait_closed()
