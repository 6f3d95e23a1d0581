"""Bidirectional message protocol: values, frames, sessions and routing."""

from .values import CallbackRef, NdArray, marshal_value, unmarshal_value, validate_wire_value
from .frames import FRAME_CAP, PROTOCOL_VERSION, decode_frame, decode_message, encode_frame
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
from .session import MessageTransport, Session, TcpTransport, WsTransport, open_tcp_session
from .router import RemoteInterface, Router

__all__ = [
    "Auth",
    "Call",
    "CallbackRef",
    "Err",
    "FRAME_CAP",
    "Hello",
    "Iface",
    "Log",
    "MessageTransport",
    "NdArray",
    "Ping",
    "Pong",
    "Progress",
    "PROTOCOL_VERSION",
    "ReleaseCb",
    "RemoteInterface",
    "Result",
    "Router",
    "RpcMessage",
    "Session",
    "TcpTransport",
    "WsTransport",
    "decode_frame",
    "decode_message",
    "encode_frame",
    "marshal_value",
    "open_tcp_session",
    "unmarshal_value",
    "validate_wire_value",
]
