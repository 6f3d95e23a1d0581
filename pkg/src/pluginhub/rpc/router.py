"""Workspace-partitioned plugin registry and call routing.

The router holds one registration per (workspace, plugin id). A caller
never learns where the target runs: in-process instances, native child
processes and plugins proxied over an engine link answer through the same
`call` contract with the same error surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from ..errors import DuplicatePluginId, NoSuchMethod, NoSuchPlugin, RemoteError, ScriptError

if TYPE_CHECKING:
    from ..script import PluginInstance
    from .session import Session

logger = logging.getLogger(__name__)

DEFAULT_CALL_TIMEOUT = 300.0


class Route:
    async def call(self, reg: "Registration", method: str, args: list, timeout: float) -> object:
        raise NotImplementedError


class InstanceRoute(Route):
    """In-process worker instance."""

    def __init__(self, instance: "PluginInstance"):
        self.instance = instance

    async def call(self, reg, method, args, timeout):
        try:
            return await self.instance.invoke(method, args)
        except ScriptError as e:
            # keep the error surface identical to out-of-process targets
            raise RemoteError(e.code, str(e)) from e


class SessionRoute(Route):
    """Plugin living behind its own session (native child, window client)."""

    def __init__(self, session: "Session"):
        self.session = session

    async def call(self, reg, method, args, timeout):
        return await self.session.call_remote(reg.plugin_id, method, args, timeout=timeout)


class LinkRoute(Route):
    """Plugin hosted by a remote engine; calls carry the workspace."""

    def __init__(self, session: "Session", link_id: str):
        self.session = session
        self.link_id = link_id

    async def call(self, reg, method, args, timeout):
        return await self.session.call_remote(
            reg.plugin_id, method, args, workspace=reg.workspace, timeout=timeout
        )


@dataclass
class Registration:
    workspace: str
    plugin_id: str
    methods: list[str]
    route: Route
    meta: dict = field(default_factory=dict)


class RemoteInterface:
    """Handle bound to one registered plugin from one caller workspace.

    Methods are exposed both as `invoke(name, *args)` and as attributes:
    `handle.calc_exp(1.0)` awaits the call.
    """

    def __init__(self, router: "Router", workspace: str, reg: Registration):
        self._router = router
        self._workspace = workspace
        self._name = reg.plugin_id
        self.methods = list(reg.methods)

    @property
    def name(self) -> str:
        return self._name

    async def invoke(self, method: str, *args) -> object:
        return await self._router.call(self._workspace, self._name, method, list(args))

    def __getattr__(self, method: str):
        if method.startswith("_") or method not in self.methods:
            raise AttributeError(method)

        async def bound(*args):
            return await self.invoke(method, *args)

        bound.__name__ = method
        return bound


class Router:
    def __init__(self, default_timeout: float = DEFAULT_CALL_TIMEOUT):
        self.default_timeout = default_timeout
        self._plugins: dict[tuple[str, str], Registration] = {}

    def register_interface(
        self,
        workspace: str,
        plugin_id: str,
        methods: list[str],
        route: Route,
        **meta,
    ) -> Registration:
        key = (workspace, plugin_id)
        if key in self._plugins:
            raise DuplicatePluginId(f"plugin {plugin_id!r} already registered in {workspace!r}")
        reg = Registration(workspace, plugin_id, list(methods), route, dict(meta))
        self._plugins[key] = reg
        return reg

    def unregister(self, workspace: str, plugin_id: str) -> None:
        self._plugins.pop((workspace, plugin_id), None)

    def unregister_session(self, session: "Session") -> list[Registration]:
        """Drop every registration answered by `session`; returns them."""
        dropped = []
        for key, reg in list(self._plugins.items()):
            route = reg.route
            if isinstance(route, (SessionRoute, LinkRoute)) and route.session is session:
                dropped.append(self._plugins.pop(key))
        return dropped

    def lookup(self, workspace: str, plugin_id: str) -> Registration | None:
        return self._plugins.get((workspace, plugin_id))

    def list_registered(self, workspace: str | None = None) -> list[Registration]:
        regs = self._plugins.values()
        if workspace is None:
            return list(regs)
        return [r for r in regs if r.workspace == workspace]

    async def call(
        self,
        caller_workspace: str,
        target: str,
        method: str,
        args: list,
        timeout: float | None = None,
    ) -> object:
        """Route a call; the caller cannot tell where the target runs."""
        reg = self.lookup(caller_workspace, target)
        if reg is None:
            raise NoSuchPlugin(f"no plugin {target!r} in workspace {caller_workspace!r}")
        if method not in reg.methods:
            raise NoSuchMethod(f"plugin {target!r} exports no method {method!r}")
        return await reg.route.call(
            reg, method, args, timeout if timeout is not None else self.default_timeout
        )

    def get_plugin(self, caller_workspace: str, name: str) -> RemoteInterface:
        """Look up a plugin visible from `caller_workspace`."""
        reg = self.lookup(caller_workspace, name)
        if reg is None:
            raise NoSuchPlugin(f"no plugin {name!r} in workspace {caller_workspace!r}")
        return RemoteInterface(self, caller_workspace, reg)
