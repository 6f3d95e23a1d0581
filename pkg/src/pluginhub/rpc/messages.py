"""Protocol message kinds and their header-dict forms.

Each message maps to one frame. The header's ``t`` key names the kind;
per-kind fields use their full names. Optional fields are omitted from the
header when unset, which keeps canonical encodings minimal and stable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import MalformedHeader, UnknownKind
from .values import value_from_header, value_to_header

ROLES = ("hub", "plugin", "engine", "client")


@dataclass(frozen=True)
class Hello:
    protocol_version: str
    role: str
    auth_required: bool = False
    launch_id: str | None = None


@dataclass(frozen=True)
class Auth:
    token: str


@dataclass(frozen=True)
class Iface:
    plugin_id: str
    methods: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class Call:
    id: int
    target: str
    method: str
    args: list = field(default_factory=list)
    # trusted sessions may address a workspace explicitly; plugin sessions
    # are pinned to their own workspace and this field is ignored for them
    workspace: str | None = None


@dataclass(frozen=True)
class Result:
    id: int
    value: object = None


@dataclass(frozen=True)
class Err:
    id: int
    code: str
    message: str


@dataclass(frozen=True)
class ReleaseCb:
    cb_id: int


@dataclass(frozen=True)
class Log:
    plugin_id: str
    level: str
    text: str


@dataclass(frozen=True)
class Progress:
    plugin_id: str
    fraction: float


@dataclass(frozen=True)
class Ping:
    pass


@dataclass(frozen=True)
class Pong:
    pass


RpcMessage = Hello | Auth | Iface | Call | Result | Err | ReleaseCb | Log | Progress | Ping | Pong

_KINDS = {
    Hello: "hello",
    Auth: "auth",
    Iface: "iface",
    Call: "call",
    Result: "result",
    Err: "err",
    ReleaseCb: "release_cb",
    Log: "log",
    Progress: "progress",
    Ping: "ping",
    Pong: "pong",
}

KIND_NAMES = frozenset(_KINDS.values())


def message_to_header(msg: RpcMessage, atts: list[bytes]) -> dict:
    """Build the JSON header object for a message, filling `atts`."""
    header: dict[str, object] = {"t": _KINDS[type(msg)]}
    if isinstance(msg, Hello):
        header["protocol_version"] = msg.protocol_version
        header["role"] = msg.role
        if msg.auth_required:
            header["auth_required"] = True
        if msg.launch_id is not None:
            header["launch_id"] = msg.launch_id
    elif isinstance(msg, Auth):
        header["token"] = msg.token
    elif isinstance(msg, Iface):
        header["plugin_id"] = msg.plugin_id
        header["methods"] = list(msg.methods)
    elif isinstance(msg, Call):
        header["id"] = msg.id
        header["target"] = msg.target
        header["method"] = msg.method
        header["args"] = [value_to_header(a, atts) for a in msg.args]
        if msg.workspace is not None:
            header["workspace"] = msg.workspace
    elif isinstance(msg, Result):
        header["id"] = msg.id
        header["value"] = value_to_header(msg.value, atts)
    elif isinstance(msg, Err):
        header["id"] = msg.id
        header["code"] = msg.code
        header["message"] = msg.message
    elif isinstance(msg, ReleaseCb):
        header["cb_id"] = msg.cb_id
    elif isinstance(msg, Log):
        header["plugin_id"] = msg.plugin_id
        header["level"] = msg.level
        header["text"] = msg.text
    elif isinstance(msg, Progress):
        if not 0.0 <= msg.fraction <= 1.0:
            raise MalformedHeader(f"progress fraction {msg.fraction} outside [0, 1]")
        header["plugin_id"] = msg.plugin_id
        header["fraction"] = float(msg.fraction)
    return header


def _need(header: dict, key: str, types) -> object:
    if key not in header:
        raise MalformedHeader(f"missing field {key!r}")
    value = header[key]
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise MalformedHeader(f"field {key!r} has wrong type")
    if not isinstance(value, types):
        raise MalformedHeader(f"field {key!r} has wrong type")
    return value


def _need_id(header: dict) -> int:
    value = _need(header, "id", int)
    if value < 0 or value >= 2**64:
        raise MalformedHeader(f"correlation id {value} outside uint64 range")
    return value


def message_from_header(header: dict, atts: list[bytes]) -> RpcMessage:
    """Reconstruct a message from its parsed header and attachment bytes."""
    kind = header.get("t")
    if not isinstance(kind, str):
        raise MalformedHeader("header has no kind field 't'")
    if kind not in KIND_NAMES:
        raise UnknownKind(kind)

    if kind == "ping":
        return Ping()
    if kind == "pong":
        return Pong()
    if kind == "hello":
        role = _need(header, "role", str)
        if role not in ROLES:
            raise MalformedHeader(f"unknown role {role!r}")
        auth_required = header.get("auth_required", False)
        if not isinstance(auth_required, bool):
            raise MalformedHeader("auth_required must be a bool")
        launch_id = header.get("launch_id")
        if launch_id is not None and not isinstance(launch_id, str):
            raise MalformedHeader("launch_id must be a string")
        return Hello(
            protocol_version=_need(header, "protocol_version", str),
            role=role,
            auth_required=auth_required,
            launch_id=launch_id,
        )
    if kind == "auth":
        return Auth(token=_need(header, "token", str))
    if kind == "iface":
        methods = _need(header, "methods", list)
        if not all(isinstance(m, str) for m in methods):
            raise MalformedHeader("iface methods must be strings")
        return Iface(plugin_id=_need(header, "plugin_id", str), methods=list(methods))
    if kind == "call":
        args = _need(header, "args", list)
        workspace = header.get("workspace")
        if workspace is not None and not isinstance(workspace, str):
            raise MalformedHeader("workspace must be a string")
        return Call(
            id=_need_id(header),
            target=_need(header, "target", str),
            method=_need(header, "method", str),
            args=[value_from_header(a, atts) for a in args],
            workspace=workspace,
        )
    if kind == "result":
        if "value" not in header:
            raise MalformedHeader("result has no value")
        return Result(id=_need_id(header), value=value_from_header(header["value"], atts))
    if kind == "err":
        return Err(
            id=_need_id(header),
            code=_need(header, "code", str),
            message=_need(header, "message", str),
        )
    if kind == "release_cb":
        cb_id = _need(header, "cb_id", int)
        if cb_id < 0:
            raise MalformedHeader("cb_id must be non-negative")
        return ReleaseCb(cb_id=cb_id)
    if kind == "log":
        return Log(
            plugin_id=_need(header, "plugin_id", str),
            level=_need(header, "level", str),
            text=_need(header, "text", str),
        )
    # progress
    fraction = _need(header, "fraction", (int, float))
    if isinstance(fraction, bool) or not 0.0 <= float(fraction) <= 1.0:
        raise MalformedHeader(f"progress fraction {fraction} outside [0, 1]")
    return Progress(plugin_id=_need(header, "plugin_id", str), fraction=float(fraction))
