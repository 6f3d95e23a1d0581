"""Environment provisioning behind pluggable providers.

A requirement string is ``provider:payload``. The null provider accepts
anything and records it; the process provider materializes a requirement
by running a command template inside the environment directory and
succeeds only on exit code 0. Real package managers slot in as additional
providers without touching the supervisor.

Environment directories are content-addressed under
``<root>/<workspace>/envs/<digest>``, so plugins with identical
requirement sets share an environment and conflicting sets never touch
each other's directories.
"""

from __future__ import annotations

import asyncio
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ProvisionFailed, UnknownProvider


@dataclass(frozen=True)
class EnvSpec:
    requirements: list[str]
    workspace: str


@dataclass(frozen=True)
class RequirementOutcome:
    requirement: str
    provider: str
    detail: str


@dataclass(frozen=True)
class EnvHandle:
    env_dir: Path
    outcomes: tuple[RequirementOutcome, ...] = ()


class EnvProvider:
    async def provision(self, payload: str, env_dir: Path) -> str:
        """Materialize one requirement; returns a human-readable detail."""
        raise NotImplementedError


class NullProvider(EnvProvider):
    """Accepts any payload; used for declarative/stub requirements."""

    async def provision(self, payload: str, env_dir: Path) -> str:
        return f"recorded {payload!r}"


class ProcessProvider(EnvProvider):
    """Runs a command template per requirement; exit 0 means provisioned.

    Template elements may reference ``{payload}`` and ``{env_dir}``. The
    default template hands the payload to a shell.
    """

    def __init__(self, template: list[str] | None = None, timeout: float = 120.0):
        self.template = template or ["/bin/sh", "-c", "{payload}"]
        self.timeout = timeout

    async def provision(self, payload: str, env_dir: Path) -> str:
        argv = [part.format(payload=payload, env_dir=str(env_dir)) for part in self.template]
        try:
            proc = await asyncio.create_subprocess_exec(
                *argv,
                cwd=env_dir,
                stdout=asyncio.subprocess.PIPE,
                stderr=asyncio.subprocess.STDOUT,
            )
            out, _ = await asyncio.wait_for(proc.communicate(), self.timeout)
        except asyncio.TimeoutError:
            proc.kill()
            raise ProvisionFailed(payload, None, "provisioning command timed out") from None
        except OSError as e:
            raise ProvisionFailed(payload, None, str(e)) from e
        text = out.decode("utf-8", errors="replace")
        if proc.returncode != 0:
            raise ProvisionFailed(payload, proc.returncode, text)
        return text.strip()


@dataclass
class ProviderRegistry:
    providers: dict[str, EnvProvider] = field(default_factory=dict)

    @classmethod
    def with_defaults(cls, command_templates: dict[str, list[str]] | None = None):
        """Null provider on ``none:``, process provider on ``cmd:``, plus one
        process provider per configured prefix -> command template."""
        registry = cls({"none": NullProvider(), "cmd": ProcessProvider()})
        for prefix, template in (command_templates or {}).items():
            registry.providers[prefix] = ProcessProvider(template)
        return registry

    def split(self, requirement: str) -> tuple[str, str]:
        prefix, sep, payload = requirement.partition(":")
        if not sep or prefix not in self.providers:
            raise UnknownProvider(prefix if sep else requirement)
        return prefix, payload

    def check(self, requirements: list[str]) -> None:
        for requirement in requirements:
            self.split(requirement)

    @property
    def prefixes(self) -> list[str]:
        return sorted(self.providers)


def env_digest(requirements: list[str]) -> str:
    return hashlib.sha256("\n".join(requirements).encode("utf-8")).hexdigest()[:16]


async def provision_env(spec: EnvSpec, registry: ProviderRegistry, data_root: Path) -> EnvHandle:
    """Provision every requirement; all prefixes are checked up front so a
    half-known set fails before any side effects."""
    registry.check(spec.requirements)
    env_dir = data_root / spec.workspace / "envs" / env_digest(spec.requirements)
    env_dir.mkdir(parents=True, exist_ok=True)
    outcomes: list[RequirementOutcome] = []
    for requirement in spec.requirements:
        prefix, payload = registry.split(requirement)
        try:
            detail = await registry.providers[prefix].provision(payload, env_dir)
        except ProvisionFailed:
            raise
        except Exception as e:
            raise ProvisionFailed(requirement, None, str(e)) from e
        outcomes.append(RequirementOutcome(requirement, prefix, detail))
    return EnvHandle(env_dir=env_dir, outcomes=tuple(outcomes))
