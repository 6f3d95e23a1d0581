"""Length-prefixed frame codec.

Frame layout::

    [4 bytes big-endian: header length H]
    [H bytes: canonical JSON header, UTF-8]
    [binary attachments, concatenated in header-declared order]

The canonical header has keys sorted lexicographically and no
insignificant whitespace. When a message carries attachments the header's
top-level ``atts`` key lists their byte lengths in order. A whole frame is
capped at 64 MiB.

`decode_frame` implements streaming semantics: a prefix of a frame raises
NeedMoreBytes with the minimum count still missing. `decode_message`
implements datagram semantics for transports with message boundaries
(websocket binary messages): the buffer must hold exactly one frame.
"""

from __future__ import annotations

import json
import struct

from ..errors import (
    AttachmentLengthMismatch,
    BadMagicLength,
    MalformedHeader,
    NeedMoreBytes,
    OversizeFrame,
)
from .messages import RpcMessage, message_from_header, message_to_header

PROTOCOL_VERSION = "1"

FRAME_CAP = 64 * 1024 * 1024

_LEN = struct.Struct(">I")


def _canonical(header: dict) -> bytes:
    return json.dumps(
        header, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False
    ).encode("utf-8")


def encode_frame(msg: RpcMessage) -> bytes:
    """Encode one message into its canonical frame bytes."""
    atts: list[bytes] = []
    header = message_to_header(msg, atts)
    if atts:
        header["atts"] = [len(a) for a in atts]
    header_bytes = _canonical(header)
    total = 4 + len(header_bytes) + sum(len(a) for a in atts)
    if total > FRAME_CAP:
        raise OversizeFrame(f"frame of {total} bytes exceeds the {FRAME_CAP} byte cap")
    return b"".join([_LEN.pack(len(header_bytes)), header_bytes] + atts)


def _parse_header(header_bytes: bytes) -> tuple[dict, list[int]]:
    try:
        header = json.loads(header_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedHeader(f"header is not valid JSON: {e}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")
    att_lens = header.get("atts", [])
    if not isinstance(att_lens, list) or not all(
        isinstance(n, int) and not isinstance(n, bool) and n >= 0 for n in att_lens
    ):
        raise MalformedHeader("atts must list non-negative attachment lengths")
    return header, att_lens


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[RpcMessage, int]:
    """Decode the first frame in `buf`; returns (message, bytes consumed).

    Raises NeedMoreBytes when `buf` holds only a frame prefix, and a typed
    codec error when the prefix already proves the frame invalid. No view
    over `buf` outlives the call, so mutable receive buffers stay safely
    resizable afterwards.
    """
    size = len(buf)
    if size < 4:
        raise NeedMoreBytes(4 - size)
    (header_len,) = _LEN.unpack(bytes(buf[:4]))
    if header_len == 0:
        raise MalformedHeader("empty header")
    if 4 + header_len > FRAME_CAP:
        raise BadMagicLength(f"declared header length {header_len} exceeds the frame cap")
    if size < 4 + header_len:
        raise NeedMoreBytes(4 + header_len - size)
    header, att_lens = _parse_header(bytes(buf[4 : 4 + header_len]))
    total = 4 + header_len + sum(att_lens)
    if total > FRAME_CAP:
        raise MalformedHeader(f"frame of {total} bytes exceeds the {FRAME_CAP} byte cap")
    if size < total:
        raise NeedMoreBytes(total - size)
    atts: list[bytes] = []
    offset = 4 + header_len
    for n in att_lens:
        atts.append(bytes(buf[offset : offset + n]))
        offset += n
    return message_from_header(header, atts), total


def decode_message(data: bytes) -> RpcMessage:
    """Decode a complete frame with no bytes to spare.

    Used on message-boundary transports, where a short attachment is a
    definite length mismatch rather than pending input.
    """
    size = len(data)
    if size < 4:
        raise MalformedHeader("message shorter than the length prefix")
    (header_len,) = _LEN.unpack(bytes(data[:4]))
    if header_len == 0:
        raise MalformedHeader("empty header")
    if 4 + header_len > FRAME_CAP:
        raise BadMagicLength(f"declared header length {header_len} exceeds the frame cap")
    if size < 4 + header_len:
        raise MalformedHeader("message truncated inside the header")
    header, att_lens = _parse_header(bytes(data[4 : 4 + header_len]))
    expected = 4 + header_len + sum(att_lens)
    if expected > FRAME_CAP:
        raise MalformedHeader(f"frame of {expected} bytes exceeds the {FRAME_CAP} byte cap")
    if size < expected:
        raise AttachmentLengthMismatch(
            f"header declares {sum(att_lens)} attachment bytes, "
            f"{size - 4 - header_len} present"
        )
    if size > expected:
        raise MalformedHeader(f"{size - expected} trailing bytes after the frame")
    atts: list[bytes] = []
    offset = 4 + header_len
    for n in att_lens:
        atts.append(bytes(data[offset : offset + n]))
        offset += n
    return message_from_header(header, atts)
