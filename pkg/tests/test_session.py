"""Session behavior: handshake, auth, correlation, callbacks, transports."""

import asyncio
import contextlib
import random

import pytest

from pluginhub.errors import (
    AuthFailed,
    HandshakeTimeout,
    NoSuchMethod,
    RemoteError,
    SessionClosed,
    VersionMismatch,
)
from pluginhub.rpc import Session, TcpTransport, WsTransport, open_tcp_session
from pluginhub.rpc.frames import encode_frame
from pluginhub.rpc.messages import Hello

from conftest import async_test


@contextlib.asynccontextmanager
async def serve_sessions(handler=None, token=None, **session_kw):
    """Loopback TCP acceptor wrapping each connection in a Session."""
    accepted: list[Session] = []

    async def on_conn(reader, writer):
        session = Session(TcpTransport(reader, writer), local_role="hub", **session_kw)
        session.call_handler = handler
        accepted.append(session)
        try:
            await session.handshake_accept(token)
        except Exception:
            return
        session.start()

    server = await asyncio.start_server(on_conn, "127.0.0.1", 0)
    port = server.sockets[0].getsockname()[1]
    try:
        yield port, accepted
    finally:
        server.close()
        await server.wait_closed()
        for s in accepted:
            await s.close()


async def echo_handler(session, call):
    if call.method == "echo":
        return call.args[0]
    if call.method == "echo_delayed":
        await asyncio.sleep(random.uniform(0, 0.01))
        return call.args[0]
    if call.method == "invoke_cb":
        return await call.args[0](call.args[1])
    if call.method == "invoke_cb_twice":
        first = await call.args[0](call.args[1])
        second = await call.args[0](call.args[1])
        return [first, second]
    if call.method == "boom":
        raise ValueError("kaboom")
    raise NoSuchMethod(call.method)


class TestHandshake:
    @async_test
    async def test_plain_session(self):
        async with serve_sessions(echo_handler) as (port, accepted):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            assert client.peer_role == "hub"
            assert await client.call_remote("any", "echo", [42]) == 42
            await client.close()

    @async_test
    async def test_token_accepted(self):
        async with serve_sessions(echo_handler, token="s3cret") as (port, accepted):
            client = await open_tcp_session("127.0.0.1", port, role="client", token="s3cret")
            assert client.authenticated
            await client.close()

    @async_test
    async def test_wrong_token_rejected(self):
        async with serve_sessions(echo_handler, token="s3cret") as (port, _):
            with pytest.raises(AuthFailed):
                await open_tcp_session("127.0.0.1", port, role="client", token="nope")

    @async_test
    async def test_missing_token_rejected_client_side(self):
        async with serve_sessions(echo_handler, token="s3cret") as (port, _):
            with pytest.raises(AuthFailed):
                await open_tcp_session("127.0.0.1", port, role="client")

    @async_test
    async def test_silent_peer_times_out(self):
        async def swallow(reader, writer):
            await reader.read(1024)
            await asyncio.sleep(10)

        server = await asyncio.start_server(swallow, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        try:
            with pytest.raises(HandshakeTimeout):
                await open_tcp_session(
                    "127.0.0.1", port, role="client", handshake_timeout=0.2
                )
        finally:
            server.close()
            await server.wait_closed()

    @async_test
    async def test_version_mismatch(self):
        async def old_peer(reader, writer):
            writer.write(encode_frame(Hello(protocol_version="0", role="hub")))
            await writer.drain()

        server = await asyncio.start_server(old_peer, "127.0.0.1", 0)
        port = server.sockets[0].getsockname()[1]
        try:
            reader, writer = await asyncio.open_connection("127.0.0.1", port)
            session = Session(TcpTransport(reader, writer), local_role="client")
            with pytest.raises(VersionMismatch):
                await session.handshake_connect()
        finally:
            server.close()
            await server.wait_closed()


class TestCalls:
    @async_test
    async def test_concurrent_echo_no_crosstalk(self):
        async with serve_sessions(echo_handler) as (port, accepted):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            n = 300
            results = await asyncio.gather(
                *(client.call_remote("any", "echo_delayed", [i]) for i in range(n))
            )
            assert results == list(range(n))
            assert client.pending == {}
            assert accepted[0].pending == {}
            await client.close()

    @async_test
    async def test_remote_exception_becomes_remote_error(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            with pytest.raises(RemoteError) as exc:
                await client.call_remote("any", "boom", [])
            assert "kaboom" in str(exc.value)
            await client.close()

    @async_test
    async def test_typed_error_crosses_wire(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            with pytest.raises(NoSuchMethod):
                await client.call_remote("any", "missing", [])
            await client.close()

    @async_test
    async def test_session_drop_fails_pending_calls(self):
        gate = asyncio.Event()

        async def hang_handler(session, call):
            await gate.wait()

        async with serve_sessions(hang_handler) as (port, accepted):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            task = asyncio.ensure_future(client.call_remote("any", "hang", []))
            await asyncio.sleep(0.05)
            await accepted[0].close()
            with pytest.raises(SessionClosed):
                await task
            assert client.pending == {}
            gate.set()

    @async_test
    async def test_call_after_close_raises(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            await client.close()
            with pytest.raises(SessionClosed):
                await client.call_remote("any", "echo", [1])

    @async_test
    async def test_garbage_frames_drop_session_cleanly(self):
        async with serve_sessions(echo_handler) as (port, accepted):
            reader, writer = await asyncio.open_connection("127.0.0.1", port)
            transport = TcpTransport(reader, writer)
            session = Session(transport, local_role="client")
            await session.handshake_connect()
            writer.write(b"\x00\x00\x00\x04lol!")
            await writer.drain()
            await asyncio.sleep(0.1)
            assert accepted[0].closed
            await session.close()


class TestCallbacks:
    @async_test
    async def test_callback_round_trip(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            seen = []

            def cb(x):
                seen.append(x)
                return x * 10

            result = await client.call_remote("any", "invoke_cb", [cb, 4])
            assert result == 40
            assert seen == [4]
            await client.close()

    @async_test
    async def test_non_persistent_released_after_first_result(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            assert await client.call_remote("any", "invoke_cb", [lambda x: x, 1]) == 1
            await asyncio.sleep(0.05)
            assert len(client.callbacks) == 0
            await client.close()

    @async_test
    async def test_second_use_of_single_shot_callback_fails(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")
            with pytest.raises(NoSuchMethod):
                await client.call_remote("any", "invoke_cb_twice", [lambda x: x, 1])
            await client.close()

    @async_test
    async def test_persistent_callback_survives_reuse(self):
        async with serve_sessions(echo_handler) as (port, _):
            client = await open_tcp_session("127.0.0.1", port, role="client")

            def cb(x):
                return x + 1

            cb.persistent_callback = True
            assert await client.call_remote("any", "invoke_cb_twice", [cb, 1]) == [2, 2]
            assert len(client.callbacks) == 1
            await client.close()
            assert len(client.callbacks) == 0


class TestWsTransport:
    @async_test
    async def test_session_over_websocket(self):
        from websockets.asyncio.server import serve

        sessions = []

        async def ws_handler(ws):
            session = Session(WsTransport(ws), local_role="hub")
            session.call_handler = echo_handler
            sessions.append(session)
            await session.handshake_accept(None)
            session.start()
            await session.wait_closed()

        async with serve(ws_handler, "127.0.0.1", 0) as server:
            port = server.sockets[0].getsockname()[1]
            from websockets.asyncio.client import connect

            async with connect(f"ws://127.0.0.1:{port}/ws") as ws:
                client = Session(WsTransport(ws), local_role="client")
                await client.handshake_connect()
                assert await client.call_remote("any", "echo", [7.5]) == 7.5
                import numpy as np

                arr = np.arange(12, dtype=np.float64).reshape(3, 4)
                back = await client.call_remote("any", "echo", [arr])
                assert back.tobytes() == arr.tobytes()
                await client.close()
