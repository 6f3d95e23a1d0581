"""Linear plugin chains and their shareable URL encoding.

A workflow names an ordered list of (plugin, method) steps inside one
workspace. Execution threads a single value through the chain: step i's
output is step i+1's sole argument. Workflow URLs carry the definition as
``<base>/#/workflow?def=<base64url of canonical JSON>`` (sorted keys, no
whitespace, padding stripped).
"""

from __future__ import annotations

import base64
import binascii
import json
import urllib.parse
from dataclasses import dataclass
from typing import Protocol

from .errors import MalformedDef, NotAWorkflowUrl, StepFailed
from .naming import is_valid_name

WORKFLOW_VERSION = "1"


class CallRouter(Protocol):
    """Anything that can route a workspace-scoped plugin call."""

    async def call(
        self, workspace: str, target: str, method: str, args: list
    ) -> object: ...


@dataclass(frozen=True)
class Step:
    plugin_name: str
    method: str


@dataclass(frozen=True)
class WorkflowDef:
    name: str
    workspace: str
    steps: tuple[Step, ...]
    version: str = WORKFLOW_VERSION


def _check_def(wf: WorkflowDef) -> None:
    if wf.version != WORKFLOW_VERSION:
        raise MalformedDef(f"unsupported workflow version {wf.version!r}")
    if not wf.steps:
        raise MalformedDef("a workflow needs at least one step")
    if not is_valid_name(wf.name):
        raise MalformedDef(f"workflow name {wf.name!r} is not a legal name")
    if not is_valid_name(wf.workspace):
        raise MalformedDef(f"workspace {wf.workspace!r} is not a legal name")
    for step in wf.steps:
        if not is_valid_name(step.plugin_name) or not is_valid_name(step.method):
            raise MalformedDef(f"step {step.plugin_name}.{step.method} has an illegal name")


async def run_workflow(router: CallRouter, wf: WorkflowDef, input_value: object) -> object:
    """Run the chain; on failure the error names the failing step index."""
    _check_def(wf)
    value = input_value
    for index, step in enumerate(wf.steps):
        try:
            value = await router.call(wf.workspace, step.plugin_name, step.method, [value])
        except Exception as e:
            raise StepFailed(index, e) from e
    return value


def _encode_def(wf: WorkflowDef) -> str:
    payload = {
        "name": wf.name,
        "workspace": wf.workspace,
        "steps": [{"plugin": s.plugin_name, "method": s.method} for s in wf.steps],
        "version": wf.version,
    }
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return base64.urlsafe_b64encode(canonical).decode("ascii").rstrip("=")


def encode_workflow_url(base: str, wf: WorkflowDef) -> str:
    _check_def(wf)
    return f"{base}/#/workflow?def={_encode_def(wf)}"


def parse_workflow_url(url: str) -> WorkflowDef:
    fragment = urllib.parse.urlsplit(url).fragment
    if not fragment.startswith("/workflow?"):
        raise NotAWorkflowUrl(f"{url!r} has no #/workflow fragment")
    params = urllib.parse.parse_qs(fragment[len("/workflow?") :], keep_blank_values=True)
    encoded = params.get("def", [""])[0]
    if not encoded:
        raise MalformedDef("workflow URL carries no def parameter")
    padded = encoded + "=" * (-len(encoded) % 4)
    try:
        raw = base64.urlsafe_b64decode(padded.encode("ascii"))
        payload = json.loads(raw.decode("utf-8"))
    except (binascii.Error, UnicodeError, ValueError) as e:
        raise MalformedDef(f"undecodable workflow payload: {e}") from e
    if not isinstance(payload, dict):
        raise MalformedDef("workflow payload must be an object")
    steps_raw = payload.get("steps")
    if (
        not isinstance(payload.get("name"), str)
        or not isinstance(payload.get("workspace"), str)
        or not isinstance(payload.get("version"), str)
        or not isinstance(steps_raw, list)
    ):
        raise MalformedDef("workflow payload is missing required fields")
    steps = []
    for item in steps_raw:
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("plugin"), str)
            or not isinstance(item.get("method"), str)
        ):
            raise MalformedDef("workflow steps need a plugin and a method")
        steps.append(Step(item["plugin"], item["method"]))
    wf = WorkflowDef(
        name=payload["name"],
        workspace=payload["workspace"],
        steps=tuple(steps),
        version=payload["version"],
    )
    _check_def(wf)
    return wf
