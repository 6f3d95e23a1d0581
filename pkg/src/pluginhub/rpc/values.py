"""Wire value model and host-value marshaling.

A wire value is null, bool, int64, float64, string, a list of wire values,
a string-keyed map, an NdArray (dtype + shape + row-major little-endian
bytes) or a callback reference. Inside a frame header, values are plain
JSON except for three single-key tagged forms::

    {"_nd":  {"att": <index>, "dtype": "...", "shape": [...]}}   nd-array
    {"_cb":  {"id": <cb_id>, "persistent": <bool>}}              callback
    {"_f":   "nan" | "inf" | "-inf"}                             special float

A genuine single-key map whose key is one of the tags is wrapped as
``{"_esc": {...}}``, keeping decoding unambiguous for arbitrary maps.
Array payloads travel as binary attachments after the header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import AttachmentLengthMismatch, MalformedHeader, UnsupportedType

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

DTYPES = {
    "u8": 1,
    "i8": 1,
    "i16": 2,
    "i32": 4,
    "i64": 8,
    "f32": 4,
    "f64": 8,
}

_NUMPY_DTYPES = {
    "u8": np.dtype("<u1"),
    "i8": np.dtype("<i1"),
    "i16": np.dtype("<i2"),
    "i32": np.dtype("<i4"),
    "i64": np.dtype("<i8"),
    "f32": np.dtype("<f4"),
    "f64": np.dtype("<f8"),
}

_RESERVED_KEYS = frozenset({"_nd", "_cb", "_f", "_esc"})


@dataclass(frozen=True)
class NdArray:
    """Typed n-dimensional array: row-major little-endian payload bytes."""

    dtype: str
    shape: tuple[int, ...]
    data: bytes

    def __post_init__(self):
        if self.dtype not in DTYPES:
            raise UnsupportedType(f"unknown dtype {self.dtype!r}")
        if any((not isinstance(d, int)) or d < 0 for d in self.shape):
            raise UnsupportedType(f"bad shape {self.shape!r}")
        expected = DTYPES[self.dtype] * math.prod(self.shape)
        if len(self.data) != expected:
            raise UnsupportedType(
                f"data length {len(self.data)} != {expected} for {self.dtype}{list(self.shape)}"
            )

    @classmethod
    def from_numpy(cls, arr: np.ndarray) -> "NdArray":
        for name, dt in _NUMPY_DTYPES.items():
            if arr.dtype == dt:
                return cls(name, tuple(arr.shape), np.ascontiguousarray(arr).tobytes())
        raise UnsupportedType(f"numpy dtype {arr.dtype} has no wire representation")

    def to_numpy(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=_NUMPY_DTYPES[self.dtype]).reshape(self.shape)


@dataclass(frozen=True)
class CallbackRef:
    """Reference to a function living on the peer that sent it."""

    cb_id: int
    persistent: bool = False


def validate_wire_value(value: object, _depth: int = 0) -> None:
    """Raise UnsupportedType unless `value` is in the wire value model."""
    if _depth > 64:
        raise UnsupportedType("value nests too deeply")
    if value is None or isinstance(value, (bool, str, NdArray, CallbackRef)):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise UnsupportedType(f"integer {value} outside int64 range")
        return
    if isinstance(value, float):
        return
    if isinstance(value, list):
        for item in value:
            validate_wire_value(item, _depth + 1)
        return
    if isinstance(value, dict):
        for k, v in value.items():
            if not isinstance(k, str):
                raise UnsupportedType(f"map keys must be strings, got {type(k).__name__}")
            validate_wire_value(v, _depth + 1)
        return
    raise UnsupportedType(f"{type(value).__name__} has no wire representation")


# ---------------------------------------------------------------------------
# header-form encoding (used by the frame codec)


def value_to_header(value: object, atts: list[bytes]) -> object:
    """Encode a wire value into its JSON header form, appending any binary
    payloads to `atts`."""
    if value is None or isinstance(value, (bool, str)):
        return value
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise UnsupportedType(f"integer {value} outside int64 range")
        return value
    if isinstance(value, float):
        if math.isnan(value):
            return {"_f": "nan"}
        if math.isinf(value):
            return {"_f": "inf" if value > 0 else "-inf"}
        return value
    if isinstance(value, NdArray):
        index = len(atts)
        atts.append(value.data)
        return {"_nd": {"att": index, "dtype": value.dtype, "shape": list(value.shape)}}
    if isinstance(value, CallbackRef):
        return {"_cb": {"id": value.cb_id, "persistent": value.persistent}}
    if isinstance(value, list):
        return [value_to_header(v, atts) for v in value]
    if isinstance(value, dict):
        for k in value:
            if not isinstance(k, str):
                raise UnsupportedType(f"map keys must be strings, got {type(k).__name__}")
        # traverse in sorted-key order: the canonical header sorts keys, so
        # attachment indexes must be assigned in that same order for the
        # encoding to be canonical in the value (not its insertion history)
        encoded = {k: value_to_header(value[k], atts) for k in sorted(value)}
        if len(encoded) == 1 and next(iter(encoded)) in _RESERVED_KEYS:
            return {"_esc": encoded}
        return encoded
    raise UnsupportedType(f"{type(value).__name__} has no wire representation")


def value_from_header(obj: object, atts: list[bytes], _depth: int = 0) -> object:
    """Decode the JSON header form back into a wire value."""
    if _depth > 200:
        raise MalformedHeader("value nests too deeply")
    if obj is None or isinstance(obj, (bool, str)):
        return obj
    if isinstance(obj, int):
        if not INT64_MIN <= obj <= INT64_MAX:
            raise MalformedHeader(f"integer {obj} outside int64 range")
        return obj
    if isinstance(obj, float):
        return obj
    if isinstance(obj, list):
        return [value_from_header(v, atts, _depth + 1) for v in obj]
    if isinstance(obj, dict):
        if len(obj) == 1:
            key = next(iter(obj))
            if key == "_esc":
                inner = obj["_esc"]
                if not isinstance(inner, dict):
                    raise MalformedHeader("_esc must wrap a map")
                return {
                    k: value_from_header(v, atts, _depth + 1) for k, v in inner.items()
                }
            if key == "_f":
                tag = obj["_f"]
                specials = {"nan": math.nan, "inf": math.inf, "-inf": -math.inf}
                if tag not in specials:
                    raise MalformedHeader(f"bad special float {tag!r}")
                return specials[tag]
            if key == "_cb":
                inner = obj["_cb"]
                if (
                    not isinstance(inner, dict)
                    or not isinstance(inner.get("id"), int)
                    or isinstance(inner.get("id"), bool)
                    or inner.get("id") < 0
                    or not isinstance(inner.get("persistent"), bool)
                ):
                    raise MalformedHeader("bad callback reference")
                return CallbackRef(inner["id"], inner["persistent"])
            if key == "_nd":
                inner = obj["_nd"]
                if not isinstance(inner, dict):
                    raise MalformedHeader("bad nd-array node")
                att = inner.get("att")
                dtype = inner.get("dtype")
                shape = inner.get("shape")
                if (
                    not isinstance(att, int)
                    or isinstance(att, bool)
                    or not isinstance(dtype, str)
                    or dtype not in DTYPES
                    or not isinstance(shape, list)
                    or not all(isinstance(d, int) and not isinstance(d, bool) and d >= 0 for d in shape)
                ):
                    raise MalformedHeader("bad nd-array node")
                if not 0 <= att < len(atts):
                    raise AttachmentLengthMismatch(f"nd-array references missing attachment {att}")
                data = atts[att]
                expected = DTYPES[dtype] * math.prod(shape)
                if len(data) != expected:
                    raise AttachmentLengthMismatch(
                        f"attachment {att} holds {len(data)} bytes, "
                        f"{dtype}{shape} needs {expected}"
                    )
                return NdArray(dtype, tuple(shape), bytes(data))
        return {k: value_from_header(v, atts, _depth + 1) for k, v in obj.items()}
    raise MalformedHeader(f"unexpected header value of type {type(obj).__name__}")


# ---------------------------------------------------------------------------
# host-value marshaling


class CallbackRegistry:
    """Per-session table of exported host functions."""

    def __init__(self):
        self._next_id = 0
        self._slots: dict[int, tuple[Callable, bool]] = {}

    def register(self, fn: Callable, persistent: bool = False) -> CallbackRef:
        cb_id = self._next_id
        self._next_id += 1
        self._slots[cb_id] = (fn, persistent)
        return CallbackRef(cb_id, persistent)

    def get(self, cb_id: int) -> tuple[Callable, bool] | None:
        return self._slots.get(cb_id)

    def release(self, cb_id: int) -> None:
        self._slots.pop(cb_id, None)

    def clear(self) -> None:
        self._slots.clear()

    def __len__(self) -> int:
        return len(self._slots)


def marshal_value(value: object, callbacks: CallbackRegistry | None = None) -> object:
    """Convert a host value to a wire value.

    Numpy arrays become NdArray; callables become callback references
    (requires a registry). Tuples become lists. Everything else must
    already live in the wire model.
    """
    if value is None or isinstance(value, (bool, str, NdArray, CallbackRef)):
        return value
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise UnsupportedType(f"integer {value} outside int64 range")
        return value
    if isinstance(value, float):
        return value
    if isinstance(value, np.ndarray):
        return NdArray.from_numpy(value)
    if isinstance(value, np.generic):
        return marshal_value(value.item(), callbacks)
    if isinstance(value, (list, tuple)):
        return [marshal_value(v, callbacks) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise UnsupportedType(f"map keys must be strings, got {type(k).__name__}")
            out[k] = marshal_value(v, callbacks)
        return out
    if callable(value):
        if callbacks is None:
            raise UnsupportedType("cannot marshal a function without a callback registry")
        persistent = bool(getattr(value, "persistent_callback", False))
        return callbacks.register(value, persistent)
    raise UnsupportedType(f"{type(value).__name__} has no wire representation")


def unmarshal_value(value: object, make_proxy: Callable[[CallbackRef], Callable] | None = None):
    """Convert a wire value to a host value.

    NdArray becomes a numpy array; callback references become proxy
    callables when a factory is given, and stay CallbackRef otherwise.
    """
    if isinstance(value, NdArray):
        return value.to_numpy()
    if isinstance(value, CallbackRef):
        return make_proxy(value) if make_proxy is not None else value
    if isinstance(value, list):
        return [unmarshal_value(v, make_proxy) for v in value]
    if isinstance(value, dict):
        return {k: unmarshal_value(v, make_proxy) for k, v in value.items()}
    return value
