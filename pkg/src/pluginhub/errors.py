"""Exception hierarchy shared across the hub.

Every typed failure raised by the public API derives from HubError, so
callers (the CLI in particular) can map failures to exit codes without
string matching. Error classes carry structured fields where a caller
needs them (step indexes, correlation data, exit codes).
"""

from __future__ import annotations


class HubError(Exception):
    """Base class for all hub errors."""

    code = "HubError"

    def __str__(self) -> str:  # pragma: no cover - cosmetic
        base = super().__str__()
        return base if base else self.code


# ---------------------------------------------------------------------------
# plugin file format


class PluginFormatError(HubError):
    code = "PluginFormatError"


class MissingConfig(PluginFormatError):
    code = "MissingConfig"


class MalformedConfig(PluginFormatError):
    code = "MalformedConfig"


class MalformedDocument(PluginFormatError):
    """Structural error in the section layout (unterminated section etc.)."""

    code = "MalformedDocument"


class MissingRequiredField(PluginFormatError):
    code = "MissingRequiredField"

    def __init__(self, field: str):
        super().__init__(f"config is missing required field {field!r}")
        self.field = field


class DuplicateSection(PluginFormatError):
    code = "DuplicateSection"

    def __init__(self, kind: str):
        super().__init__(f"more than one <{kind}> section")
        self.kind = kind


class IllegalName(PluginFormatError):
    code = "IllegalName"


class UnknownTag(PluginFormatError):
    code = "UnknownTag"

    def __init__(self, tag: str, known: list[str]):
        super().__init__(f"unknown tag {tag!r}; spec declares {known!r}")
        self.tag = tag
        self.known = known


class InvariantViolation(PluginFormatError):
    code = "InvariantViolation"


# ---------------------------------------------------------------------------
# script runtime


class ScriptError(HubError):
    code = "ScriptError"


class ScriptSyntaxError(ScriptError):
    code = "SyntaxError"

    def __init__(self, message: str, line: int, col: int, expected: str | None = None):
        loc = f"line {line}, col {col}"
        super().__init__(f"{message} at {loc}" + (f" (expected {expected})" if expected else ""))
        self.line = line
        self.col = col
        self.expected = expected


class DuplicateFunction(ScriptError):
    code = "DuplicateFunction"

    def __init__(self, name: str):
        super().__init__(f"function {name!r} defined more than once")
        self.name = name


class NoSuchFunction(ScriptError):
    code = "NoSuchFunction"


class ArityMismatch(ScriptError):
    code = "ArityMismatch"


class ScriptRuntimeError(ScriptError):
    code = "RuntimeError"


class FuelExhausted(ScriptError):
    code = "FuelExhausted"


class BridgeError(ScriptError):
    """A cross-plugin call made from a script failed; wraps the cause."""

    code = "BridgeError"


# ---------------------------------------------------------------------------
# wire codec


class CodecError(HubError):
    code = "CodecError"


class OversizeFrame(CodecError):
    code = "OversizeFrame"


class NeedMoreBytes(CodecError):
    """Input ends mid-frame; `missing` more bytes are required at minimum."""

    code = "NeedMoreBytes"

    def __init__(self, missing: int):
        super().__init__(f"need at least {missing} more bytes")
        self.missing = missing


class BadMagicLength(CodecError):
    code = "BadMagicLength"


class MalformedHeader(CodecError):
    code = "MalformedHeader"


class AttachmentLengthMismatch(CodecError):
    code = "AttachmentLengthMismatch"


class UnknownKind(CodecError):
    code = "UnknownKind"

    def __init__(self, kind: str):
        super().__init__(f"unknown message kind {kind!r}")
        self.kind = kind


class UnsupportedType(CodecError):
    code = "UnsupportedType"


# ---------------------------------------------------------------------------
# rpc sessions and routing


class RpcError(HubError):
    code = "RpcError"


class VersionMismatch(RpcError):
    code = "VersionMismatch"


class AuthFailed(RpcError):
    code = "AuthFailed"


class HandshakeTimeout(RpcError):
    code = "HandshakeTimeout"


class DuplicatePluginId(RpcError):
    code = "DuplicatePluginId"


class NoSuchPlugin(RpcError):
    code = "NoSuchPlugin"


class NoSuchMethod(RpcError):
    code = "NoSuchMethod"


class RemoteError(RpcError):
    """The remote peer answered a call with an error frame."""

    code = "RemoteError"

    def __init__(self, remote_code: str, message: str):
        super().__init__(f"{remote_code}: {message}")
        self.remote_code = remote_code
        self.remote_message = message


class CallTimeout(RpcError):
    code = "CallTimeout"


class SessionClosed(RpcError):
    code = "SessionClosed"


# ---------------------------------------------------------------------------
# workspace store


class StoreError(HubError):
    code = "StoreError"


class StoreIoError(StoreError):
    code = "IoError"


class CorruptStore(StoreError):
    code = "CorruptStore"

    def __init__(self, file: str, reason: str):
        super().__init__(f"{file}: {reason}")
        self.file = file
        self.reason = reason


class NoSuchWorkspace(StoreError):
    code = "NoSuchWorkspace"


# ---------------------------------------------------------------------------
# registry / installs


class RegistryError(HubError):
    code = "RegistryError"


class NotAnAppUrl(RegistryError):
    code = "NotAnAppUrl"


class MissingPluginParam(RegistryError):
    code = "MissingPluginParam"


class BadRef(RegistryError):
    code = "BadRef"

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


class PluginNotInIndex(RegistryError):
    code = "PluginNotInIndex"


class FetchError(RegistryError):
    code = "FetchError"


class MalformedIndex(RegistryError):
    code = "MalformedIndex"


class DependencyCycle(RegistryError):
    code = "DependencyCycle"


class InstallStepError(RegistryError):
    """Failure of one step of a link install, wrapping the inner cause."""

    code = "InstallStepError"

    def __init__(self, step: str, inner: Exception):
        super().__init__(f"step {step!r} failed: {inner}")
        self.step = step
        self.inner = inner


# ---------------------------------------------------------------------------
# engine / supervision


class EngineError(HubError):
    code = "EngineError"


class UnknownProvider(EngineError):
    code = "UnknownProvider"

    def __init__(self, prefix: str):
        super().__init__(f"no environment provider registered for prefix {prefix!r}")
        self.prefix = prefix


class ProvisionFailed(EngineError):
    code = "ProvisionFailed"

    def __init__(self, requirement: str, exit_code: int | None, output: str):
        super().__init__(f"requirement {requirement!r} failed (exit {exit_code}): {output.strip()}")
        self.requirement = requirement
        self.exit_code = exit_code
        self.output = output


class SpawnError(EngineError):
    code = "SpawnError"


class ReadyTimeout(EngineError):
    code = "ReadyTimeout"


class ConnectFailed(EngineError):
    code = "ConnectFailed"


class NoSuchEngine(EngineError):
    code = "NoSuchEngine"


# ---------------------------------------------------------------------------
# workflows


class WorkflowError(HubError):
    code = "WorkflowError"


class NotAWorkflowUrl(WorkflowError):
    code = "NotAWorkflowUrl"


class MalformedDef(WorkflowError):
    code = "MalformedDef"


class StepFailed(WorkflowError):
    code = "StepFailed"

    def __init__(self, index: int, inner: Exception):
        super().__init__(f"step {index} failed: {inner}")
        self.index = index
        self.inner = inner
