"""Misbehaving shim stand-ins for containment tests.

Modes:
    garbage      handshake + iface, then answer the first call with junk bytes
    silent       handshake + iface, then never answer anything
    no-iface     handshake, then exit without declaring an interface
"""

import argparse
import asyncio
import os
import sys

from pluginhub.pluginfile import parse_plugin_file
from pluginhub.rpc.messages import Call, Iface
from pluginhub.rpc.session import Session, TcpTransport, open_tcp_session


async def main() -> None:
    parser = argparse.ArgumentParser()
    parser.add_argument("--mode", default=os.environ.get("FAULT_MODE", "garbage"))
    parser.add_argument("--spec", required=True)
    parser.add_argument("--connect", required=True)
    parser.add_argument("--token", default=None)
    parser.add_argument("--launch-id", default=None)
    args = parser.parse_args()

    with open(args.spec, encoding="utf-8") as f:
        spec = parse_plugin_file(f.read())

    host, _, port = args.connect.rpartition(":")
    session = await open_tcp_session(
        host or "127.0.0.1",
        int(port),
        role="plugin",
        token=args.token,
        launch_id=args.launch_id,
    )

    if args.mode == "no-iface":
        sys.exit(3)

    transport: TcpTransport = session.transport  # type: ignore[assignment]

    if args.mode == "garbage":
        async def handler(_session: Session, call: Call):
            writer = transport._writer
            writer.write(b"\xde\xad\xbe\xef" * 64)
            await writer.drain()
            await asyncio.sleep(30)

        session.call_handler = handler

    await session.send(Iface(plugin_id=spec.name, methods=["boom", "run"]))
    await session.wait_closed()


if __name__ == "__main__":
    asyncio.run(main())
