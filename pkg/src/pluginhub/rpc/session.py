"""Sessions: correlated, bidirectional message exchange over one transport.

A session wraps an ordered reliable byte stream (TCP) or a message stream
(websocket). Either peer may issue calls at any time; correlation ids are
monotonically increasing per sender, and completions may arrive in any
order. Frame writes are serialized per session so frames never interleave.

Handshake: the connector sends hello, the acceptor answers hello (flagging
whether it requires a token); if required, the connector sends auth and the
acceptor answers pong on success or an err frame with the reserved
correlation id 0 before closing. Call ids start at 1.

Host functions crossing the wire become callback references. Incoming
callback invocations arrive as calls on the reserved target
``__callback__`` with the callback id as the method name. A non-persistent
callback is released (release_cb sent) after its first invocation
completes; persistent ones live until explicit release or session close.
"""

from __future__ import annotations

import asyncio
import hmac
import itertools
import logging
from typing import Awaitable, Callable

from ..errors import (
    AuthFailed,
    CallTimeout,
    CodecError,
    HandshakeTimeout,
    HubError,
    NeedMoreBytes,
    NoSuchMethod,
    NoSuchPlugin,
    RemoteError,
    SessionClosed,
    VersionMismatch,
)
from .frames import PROTOCOL_VERSION, decode_frame, decode_message, encode_frame
from .messages import (
    Auth,
    Call,
    Err,
    Hello,
    Iface,
    Log,
    Ping,
    Pong,
    Progress,
    ReleaseCb,
    Result,
    RpcMessage,
)
from .values import CallbackRef, CallbackRegistry, marshal_value, unmarshal_value

logger = logging.getLogger(__name__)

DEFAULT_CALL_TIMEOUT = 300.0
DEFAULT_HANDSHAKE_TIMEOUT = 10.0

CALLBACK_TARGET = "__callback__"

# err codes mapped back to typed exceptions on the calling side
_TYPED_REMOTE_ERRORS = {
    "NoSuchPlugin": NoSuchPlugin,
    "NoSuchMethod": NoSuchMethod,
    "AuthFailed": AuthFailed,
    "CallTimeout": CallTimeout,
    "SessionClosed": SessionClosed,
}


class MessageTransport:
    """One message in, one message out; None on end of stream."""

    async def send(self, msg: RpcMessage) -> None:
        raise NotImplementedError

    async def recv(self) -> RpcMessage | None:
        raise NotImplementedError

    async def close(self) -> None:
        raise NotImplementedError


class TcpTransport(MessageTransport):
    """Frames over an asyncio TCP stream, decoded incrementally."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._reader = reader
        self._writer = writer
        self._buf = bytearray()
        self._send_lock = asyncio.Lock()

    async def send(self, msg: RpcMessage) -> None:
        frame = encode_frame(msg)
        async with self._send_lock:
            self._writer.write(frame)
            await self._writer.drain()

    async def recv(self) -> RpcMessage | None:
        while True:
            try:
                msg, consumed = decode_frame(self._buf)
            except NeedMoreBytes as e:
                chunk = await self._reader.read(max(e.missing, 4096))
                if not chunk:
                    if self._buf:
                        raise CodecError("stream ended mid-frame")
                    return None
                self._buf.extend(chunk)
                continue
            del self._buf[:consumed]
            return msg

    async def close(self) -> None:
        try:
            self._writer.close()
            await self._writer.wait_closed()
        except (ConnectionError, OSError):
            pass


class WsTransport(MessageTransport):
    """Frames over a websocket, one frame per binary message."""

    def __init__(self, ws):
        self._ws = ws
        self._send_lock = asyncio.Lock()

    async def send(self, msg: RpcMessage) -> None:
        frame = encode_frame(msg)
        async with self._send_lock:
            await self._ws.send(frame)

    async def recv(self) -> RpcMessage | None:
        # local import: websockets is only needed when the ws binding is used
        from websockets.exceptions import ConnectionClosed

        try:
            data = await self._ws.recv()
        except ConnectionClosed:
            return None
        if isinstance(data, str):
            raise CodecError("text websocket message on a binary protocol")
        return decode_message(data)

    async def close(self) -> None:
        await self._ws.close()


CallHandler = Callable[["Session", Call], Awaitable[object]]


class Session:
    """One live peer connection after (or during) handshake."""

    def __init__(
        self,
        transport: MessageTransport,
        *,
        local_role: str,
        call_timeout: float = DEFAULT_CALL_TIMEOUT,
        handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
    ):
        self.transport = transport
        self.local_role = local_role
        self.peer_role: str | None = None
        self.peer_hello: Hello | None = None
        self.authenticated = False
        self.call_timeout = call_timeout
        self.handshake_timeout = handshake_timeout
        self.pending: dict[int, asyncio.Future] = {}
        self.callbacks = CallbackRegistry()
        self.call_handler: CallHandler | None = None
        self.on_iface: Callable[["Session", Iface], None] | None = None
        self.on_log: Callable[["Session", Log], None] | None = None
        self.on_progress: Callable[["Session", Progress], None] | None = None
        self.on_closed: list[Callable[["Session"], None]] = []
        # opaque context slot for the host (workspace binding, handles...)
        self.context: dict = {}
        self._ids = itertools.count(1)
        self._released_cbs: set[int] = set()
        self._tasks: set[asyncio.Task] = set()
        self._closed = False
        self._run_task: asyncio.Task | None = None

    # -- handshake ---------------------------------------------------------

    async def handshake_connect(self, token: str | None = None, launch_id: str | None = None):
        """Client side of the handshake."""
        try:
            await asyncio.wait_for(self._connect_steps(token, launch_id), self.handshake_timeout)
        except asyncio.TimeoutError:
            await self.close()
            raise HandshakeTimeout("peer did not complete the handshake in time") from None
        except BaseException:
            await self.close()
            raise

    async def _connect_steps(self, token: str | None, launch_id: str | None):
        await self.transport.send(
            Hello(protocol_version=PROTOCOL_VERSION, role=self.local_role, launch_id=launch_id)
        )
        reply = await self.transport.recv()
        if not isinstance(reply, Hello):
            raise VersionMismatch("peer did not answer the hello")
        if reply.protocol_version != PROTOCOL_VERSION:
            raise VersionMismatch(
                f"peer speaks protocol {reply.protocol_version!r}, expected {PROTOCOL_VERSION!r}"
            )
        self.peer_hello = reply
        self.peer_role = reply.role
        if reply.auth_required:
            if token is None:
                raise AuthFailed("peer requires a token and none was provided")
            await self.transport.send(Auth(token=token))
            ack = await self.transport.recv()
            if isinstance(ack, Pong):
                self.authenticated = True
            elif isinstance(ack, Err):
                raise AuthFailed(ack.message or ack.code)
            else:
                raise AuthFailed("peer closed during authentication")
        self.start()

    async def handshake_accept(self, required_token: str | None = None):
        """Server side of the handshake.

        Does not start the read loop: the acceptor wires its handlers first
        and then calls start(), so no early frame can slip past a hook.
        """
        try:
            await asyncio.wait_for(self._accept_steps(required_token), self.handshake_timeout)
        except asyncio.TimeoutError:
            await self.close()
            raise HandshakeTimeout("peer did not complete the handshake in time") from None
        except BaseException:
            await self.close()
            raise

    async def _accept_steps(self, required_token: str | None):
        hello = await self.transport.recv()
        if not isinstance(hello, Hello):
            raise VersionMismatch("peer did not open with a hello")
        if hello.protocol_version != PROTOCOL_VERSION:
            await self.transport.send(
                Hello(protocol_version=PROTOCOL_VERSION, role=self.local_role)
            )
            raise VersionMismatch(
                f"peer speaks protocol {hello.protocol_version!r}, expected {PROTOCOL_VERSION!r}"
            )
        self.peer_hello = hello
        self.peer_role = hello.role
        await self.transport.send(
            Hello(
                protocol_version=PROTOCOL_VERSION,
                role=self.local_role,
                auth_required=required_token is not None,
            )
        )
        if required_token is not None:
            msg = await self.transport.recv()
            if not isinstance(msg, Auth) or not hmac.compare_digest(msg.token, required_token):
                await self.transport.send(Err(id=0, code="AuthFailed", message="bad token"))
                raise AuthFailed("peer presented a bad token")
            await self.transport.send(Pong())
        self.authenticated = True

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        """Start the read loop; idempotent."""
        if self._run_task is None and not self._closed:
            self._run_task = asyncio.get_running_loop().create_task(self._run())

    async def _run(self):
        try:
            while True:
                msg = await self.transport.recv()
                if msg is None:
                    break
                self._dispatch(msg)
        except CodecError as e:
            logger.warning("session %s: dropping peer after codec error: %s", self.peer_role, e)
        except (ConnectionError, OSError) as e:
            logger.debug("session %s: connection lost: %s", self.peer_role, e)
        finally:
            await self.close()

    async def close(self) -> None:
        """Close the transport, failing every pending call exactly once."""
        if self._closed:
            return
        self._closed = True
        pending = list(self.pending.values())
        self.pending.clear()
        for fut in pending:
            if not fut.done():
                fut.set_exception(SessionClosed("session closed with the call in flight"))
        self.callbacks.clear()
        for hook in self.on_closed:
            try:
                hook(self)
            except Exception:
                logger.exception("session close hook failed")
        await self.transport.close()

    @property
    def closed(self) -> bool:
        return self._closed

    async def wait_closed(self) -> None:
        if self._run_task is not None:
            await asyncio.shield(self._run_task)

    # -- outbound ----------------------------------------------------------

    async def send(self, msg: RpcMessage) -> None:
        if self._closed:
            raise SessionClosed("session is closed")
        try:
            await self.transport.send(msg)
        except (ConnectionError, OSError) as e:
            await self.close()
            raise SessionClosed(f"send failed: {e}") from e

    async def call_remote(
        self,
        target: str,
        method: str,
        args: list,
        *,
        workspace: str | None = None,
        timeout: float | None = None,
    ) -> object:
        """Issue a call and await its correlated result."""
        if self._closed:
            raise SessionClosed("session is closed")
        call_id = next(self._ids)
        fut: asyncio.Future = asyncio.get_running_loop().create_future()
        self.pending[call_id] = fut
        wire_args = [marshal_value(a, self.callbacks) for a in args]
        try:
            await self.send(
                Call(id=call_id, target=target, method=method, args=wire_args, workspace=workspace)
            )
            return await asyncio.wait_for(fut, timeout if timeout is not None else self.call_timeout)
        except asyncio.TimeoutError:
            raise CallTimeout(f"{target}.{method} did not answer in time") from None
        finally:
            self.pending.pop(call_id, None)

    # -- inbound -----------------------------------------------------------

    def _spawn(self, coro) -> None:
        task = asyncio.get_running_loop().create_task(coro)
        self._tasks.add(task)
        task.add_done_callback(self._tasks.discard)

    def _dispatch(self, msg: RpcMessage) -> None:
        if isinstance(msg, Result):
            fut = self.pending.pop(msg.id, None)
            if fut is not None and not fut.done():
                fut.set_result(unmarshal_value(msg.value, self._make_cb_proxy))
        elif isinstance(msg, Err):
            fut = self.pending.pop(msg.id, None)
            if fut is not None and not fut.done():
                exc_type = _TYPED_REMOTE_ERRORS.get(msg.code)
                fut.set_exception(
                    exc_type(msg.message) if exc_type else RemoteError(msg.code, msg.message)
                )
        elif isinstance(msg, Call):
            self._spawn(self._serve_call(msg))
        elif isinstance(msg, Ping):
            self._spawn(self.send(Pong()))
        elif isinstance(msg, ReleaseCb):
            self.callbacks.release(msg.cb_id)
        elif isinstance(msg, Iface):
            if self.on_iface is not None:
                self.on_iface(self, msg)
        elif isinstance(msg, Log):
            if self.on_log is not None:
                self.on_log(self, msg)
        elif isinstance(msg, Progress):
            if self.on_progress is not None:
                self.on_progress(self, msg)
        # pong / stray hello / stray auth: nothing to do

    async def _serve_call(self, call: Call) -> None:
        try:
            if call.target == CALLBACK_TARGET:
                value = await self._invoke_callback(call)
            else:
                if self.call_handler is None:
                    raise NoSuchPlugin(f"no plugin {call.target!r}")
                host_args = [unmarshal_value(a, self._make_cb_proxy) for a in call.args]
                value = await self.call_handler(self, Call(
                    id=call.id,
                    target=call.target,
                    method=call.method,
                    args=host_args,
                    workspace=call.workspace,
                ))
            reply: RpcMessage = Result(id=call.id, value=marshal_value(value, self.callbacks))
        except HubError as e:
            reply = Err(id=call.id, code=e.code, message=str(e))
        except Exception as e:
            logger.exception("call %s.%s crashed", call.target, call.method)
            reply = Err(id=call.id, code="InternalError", message=str(e))
        try:
            await self.send(reply)
        except SessionClosed:
            pass

    async def _invoke_callback(self, call: Call) -> object:
        try:
            cb_id = int(call.method)
        except ValueError:
            raise NoSuchMethod(f"bad callback id {call.method!r}") from None
        slot = self.callbacks.get(cb_id)
        if slot is None:
            raise NoSuchMethod(f"callback {cb_id} is not exported (or already released)")
        fn, _persistent = slot
        host_args = [unmarshal_value(a, self._make_cb_proxy) for a in call.args]
        result = fn(*host_args)
        if asyncio.iscoroutine(result):
            result = await result
        return result

    def _make_cb_proxy(self, ref: CallbackRef) -> Callable:
        async def proxy(*args):
            try:
                return await self.call_remote(CALLBACK_TARGET, str(ref.cb_id), list(args))
            finally:
                if not ref.persistent and ref.cb_id not in self._released_cbs:
                    self._released_cbs.add(ref.cb_id)
                    if not self._closed:
                        self._spawn(self.send(ReleaseCb(cb_id=ref.cb_id)))

        proxy.callback_ref = ref  # type: ignore[attr-defined]
        return proxy


async def open_tcp_session(
    host: str,
    port: int,
    *,
    role: str,
    token: str | None = None,
    launch_id: str | None = None,
    call_timeout: float = DEFAULT_CALL_TIMEOUT,
    handshake_timeout: float = DEFAULT_HANDSHAKE_TIMEOUT,
) -> Session:
    """Connect to a hub endpoint over TCP and complete the handshake."""
    reader, writer = await asyncio.open_connection(host, port)
    session = Session(
        TcpTransport(reader, writer),
        local_role=role,
        call_timeout=call_timeout,
        handshake_timeout=handshake_timeout,
    )
    await session.handshake_connect(token=token, launch_id=launch_id)
    return session
