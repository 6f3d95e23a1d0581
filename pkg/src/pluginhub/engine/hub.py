"""The hub: listeners, session acceptance, plugin lifecycle, engine links.

One Hub owns a workspace store, the call router, a native-plugin
supervisor and any attached remote engines. Installed plugins launch
lazily on first use: worker kinds instantiate in-process, native kinds
provision an environment and spawn a supervised shim child (locally or on
an assigned engine). Callers see one `call` surface regardless.

Listeners: a TCP endpoint (loopback by default) and an optional websocket
endpoint sharing the same protocol; the websocket listener can also serve
the workbench's static files. In engine mode the hub exposes the reserved
``__engine__`` interface (provision/launch/terminate/status) to the
controlling hub, and forwards calls its own plugins make to targets it
does not host back to that controller, keeping cross-hub calls
transparent in both directions.

Authenticated operator sessions (role ``client``) may drive the reserved
``__hub__`` interface and receive every plugin's log and progress frames.
Plugin sessions are pinned to the workspace they were launched into and
cannot address any other.
"""

from __future__ import annotations

import asyncio
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import (
    AuthFailed,
    ConnectFailed,
    HubError,
    NoSuchEngine,
    NoSuchMethod,
    NoSuchPlugin,
    RemoteError,
)
from ..pluginfile import resolve_tag
from ..registry import (
    DEFAULT_CONTENT_BASE,
    DEFAULT_REF,
    Fetcher,
    HttpFetcher,
    Installer,
    LocalDirFetcher,
)
from ..rpc.messages import Call, Iface, Log, Progress
from ..rpc.router import InstanceRoute, LinkRoute, Registration, Router, SessionRoute
from ..rpc.session import Session, TcpTransport, WsTransport, open_tcp_session
from ..script import DEFAULT_FUEL, instantiate, parse_script
from ..store import InstalledPlugin, Store, open_store
from ..workflow import Step, WorkflowDef, run_workflow
from .providers import EnvSpec, ProviderRegistry, provision_env
from .supervisor import NativeSupervisor, PluginHandle

logger = logging.getLogger(__name__)

SYSTEM_WORKSPACE = "__system__"
ENGINE_IFACE = "__engine__"
HUB_IFACE = "__hub__"

# invoking a plugin's "start behavior" means calling this exported method
START_METHOD = "run"

DEFAULT_PORT = 9527


@dataclass
class HubConfig:
    data_root: Path
    host: str = "127.0.0.1"
    port: int = DEFAULT_PORT  # 0 picks an ephemeral port
    ws_port: int | None = None  # None disables the websocket listener
    token: str | None = None
    engine_mode: bool = False
    ui_dir: Path | None = None
    call_timeout: float = 300.0
    handshake_timeout: float = 10.0
    ready_timeout: float = 30.0
    kill_grace: float = 5.0
    restart_limit: int = 0
    fuel_limit: int = DEFAULT_FUEL
    content_base: str = DEFAULT_CONTENT_BASE
    default_ref: str = DEFAULT_REF
    fixture_dir: Path | None = None
    provider_commands: dict[str, list[str]] = field(default_factory=dict)
    shim_command: list[str] | None = None


@dataclass
class EngineLink:
    link_id: str
    url: str
    session: Session
    capabilities: list[str] = field(default_factory=list)


class WorkerBridge:
    """Bridge for in-process workers; scoped to the plugin's workspace."""

    def __init__(self, hub: "Hub", workspace: str, plugin_id: str):
        self.hub = hub
        self.workspace = workspace
        self.plugin_id = plugin_id

    async def call(self, target: str, method: str, args: list) -> object:
        return await self.hub.call(self.workspace, target, method, args)

    async def emit_log(self, level: str, text: str) -> None:
        self.hub.on_plugin_log(self.workspace, self.plugin_id, level, text)

    async def emit_progress(self, fraction: float) -> None:
        self.hub.on_plugin_progress(self.workspace, self.plugin_id, fraction)


class Hub:
    def __init__(self, config: HubConfig):
        self.config = config
        self.store: Store = open_store(config.data_root)
        self.router = Router(default_timeout=config.call_timeout)
        self.providers = ProviderRegistry.with_defaults(config.provider_commands)
        shim_command = config.shim_command or [
            sys.executable,
            "-m",
            "pluginhub.cli",
            "shim",
        ]
        self.supervisor = NativeSupervisor(
            run_dir=Path(config.data_root) / "run",
            shim_command=shim_command,
            token=config.token,
            ready_timeout=config.ready_timeout,
            kill_grace=config.kill_grace,
            restart_limit=config.restart_limit,
        )
        self.supervisor.on_restart = self._after_restart
        self.fetcher: Fetcher = (
            LocalDirFetcher(config.fixture_dir) if config.fixture_dir else HttpFetcher()
        )
        self.links: dict[str, EngineLink] = {}
        self.assignments: dict[tuple[str, str], str] = {}
        self.client_sessions: set[Session] = set()
        self.controller: Session | None = None
        self.log_rings: dict[tuple[str, str], list] = {}
        self._tcp_server: asyncio.AbstractServer | None = None
        self._ws_server = None
        self._launch_lock = asyncio.Lock()
        self._link_seq = 0
        self._accept_tasks: set[asyncio.Task] = set()
        self._sessions: set[Session] = set()

    # -- listeners -----------------------------------------------------------

    @property
    def tcp_port(self) -> int:
        assert self._tcp_server is not None and self._tcp_server.sockets
        return self._tcp_server.sockets[0].getsockname()[1]

    @property
    def tcp_addr(self) -> str:
        return f"{self.config.host}:{self.tcp_port}"

    @property
    def ws_port(self) -> int | None:
        if self._ws_server is None:
            return None
        return next(iter(self._ws_server.sockets)).getsockname()[1]

    async def start(self) -> None:
        self._tcp_server = await asyncio.start_server(
            self._accept_tcp, self.config.host, self.config.port
        )
        self.supervisor.connect_addr = self.tcp_addr
        if self.config.ws_port is not None:
            from websockets.asyncio.server import serve

            self._ws_server = await serve(
                self._accept_ws,
                self.config.host,
                self.config.ws_port,
                process_request=self._process_http,
            ).__aenter__()

    async def aclose(self) -> None:
        await self.supervisor.terminate_all()
        for link in list(self.links.values()):
            await link.session.close()
        for session in list(self._sessions):
            await session.close()
        if self._tcp_server is not None:
            self._tcp_server.close()
            await self._tcp_server.wait_closed()
        if self._ws_server is not None:
            self._ws_server.close()
            await self._ws_server.wait_closed()
        for task in list(self._accept_tasks):
            task.cancel()

    async def __aenter__(self) -> "Hub":
        await self.start()
        return self

    async def __aexit__(self, *exc) -> None:
        await self.aclose()

    # -- session acceptance ----------------------------------------------------

    def _accept_tcp(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        session = Session(
            TcpTransport(reader, writer),
            local_role="engine" if self.config.engine_mode else "hub",
            call_timeout=self.config.call_timeout,
            handshake_timeout=self.config.handshake_timeout,
        )
        task = asyncio.get_running_loop().create_task(self._handle_session(session))
        self._accept_tasks.add(task)
        task.add_done_callback(self._accept_tasks.discard)

    async def _accept_ws(self, ws) -> None:
        session = Session(
            WsTransport(ws),
            local_role="engine" if self.config.engine_mode else "hub",
            call_timeout=self.config.call_timeout,
            handshake_timeout=self.config.handshake_timeout,
        )
        await self._handle_session(session)
        await session.wait_closed()

    async def _handle_session(self, session: Session) -> None:
        try:
            await session.handshake_accept(self.config.token)
        except AuthFailed:
            hello = session.peer_hello
            if hello is not None and hello.launch_id:
                self.supervisor.fail_auth(hello.launch_id)
            return
        except HubError as e:
            logger.debug("handshake failed: %s", e)
            return

        self._sessions.add(session)
        session.on_closed.append(self._on_session_closed)
        role = session.peer_role
        if role == "plugin":
            session.call_handler = self._plugin_call_handler
            session.on_iface = self._on_plugin_iface
            session.on_log = self._on_session_log
            session.on_progress = self._on_session_progress
        else:
            session.call_handler = self._trusted_call_handler
            session.on_log = self._on_session_log
            session.on_progress = self._on_session_progress
            if role == "client":
                self.client_sessions.add(session)
            if role == "hub" and self.config.engine_mode:
                self.controller = session
        session.start()

    def _on_session_closed(self, session: Session) -> None:
        self._sessions.discard(session)
        self.client_sessions.discard(session)
        if self.controller is session:
            self.controller = None
        self.router.unregister_session(session)

    # -- plugin sessions -------------------------------------------------------

    def _on_plugin_iface(self, session: Session, iface: Iface) -> None:
        hello = session.peer_hello
        launch_id = hello.launch_id if hello is not None else None
        pending = self.supervisor.match_launch(launch_id, iface.plugin_id)
        if pending is None:
            logger.warning("unsolicited plugin session for %r; dropping", iface.plugin_id)
            asyncio.get_running_loop().create_task(session.close())
            return
        if pending.handle.plugin_id != iface.plugin_id:
            self.supervisor.fail_launch(
                pending.handle.launch_id,
                NoSuchPlugin(
                    f"launch expected {pending.handle.plugin_id!r}, "
                    f"child announced {iface.plugin_id!r}"
                ),
            )
            asyncio.get_running_loop().create_task(session.close())
            return
        workspace = pending.handle.workspace
        session.context["workspace"] = workspace
        session.context["plugin_id"] = iface.plugin_id
        self.router.unregister(workspace, iface.plugin_id)  # replace after restart
        self.router.register_interface(
            workspace, iface.plugin_id, iface.methods, SessionRoute(session), kind="native"
        )
        handle = self.supervisor.mark_ready(pending, session)
        self.log_rings[(workspace, iface.plugin_id)] = handle.log_ring

    async def _after_restart(self, handle: PluginHandle, resolved) -> None:
        # registration happens when the new child's iface arrives; nothing else
        logger.info("relaunched %s (restart %d)", handle.plugin_id, handle.restart_count)

    async def _plugin_call_handler(self, session: Session, call: Call) -> object:
        workspace = session.context.get("workspace")
        if workspace is None:
            raise NoSuchPlugin("session is not bound to a workspace yet")
        return await self.call(
            workspace, call.target, call.method, call.args, exclude_session=session
        )

    # -- trusted sessions (clients, controlling hubs, engines) -----------------

    async def _trusted_call_handler(self, session: Session, call: Call) -> object:
        if call.target == ENGINE_IFACE:
            if not self.config.engine_mode or session.peer_role not in ("hub", "engine"):
                raise NoSuchPlugin(f"no plugin {call.target!r}")
            return await self._engine_iface_call(call)
        if call.target == HUB_IFACE:
            if session.peer_role not in ("client", "hub", "engine"):
                raise NoSuchPlugin(f"no plugin {call.target!r}")
            return await self._hub_iface_call(session, call)
        workspace = call.workspace
        if workspace is None:
            raise NoSuchPlugin("calls from operator sessions must name a workspace")
        return await self.call(
            workspace, call.target, call.method, call.args, exclude_session=session
        )

    # -- calls and lazy launching ----------------------------------------------

    async def call(
        self,
        workspace: str,
        target: str,
        method: str,
        args: list,
        timeout: float | None = None,
        exclude_session: Session | None = None,
    ) -> object:
        reg = await self.ensure_running(workspace, target)
        if reg is None:
            # not hosted here: hand the call to the controlling hub, unless
            # it is the controller asking (that would bounce forever)
            if self.controller is None or self.controller is exclude_session:
                raise NoSuchPlugin(f"no plugin {target!r} in workspace {workspace!r}")
            return await self.controller.call_remote(
                target, method, args, workspace=workspace, timeout=timeout
            )
        route = reg.route
        if (
            exclude_session is not None
            and isinstance(route, (SessionRoute, LinkRoute))
            and route.session is exclude_session
        ):
            raise NoSuchPlugin(f"no plugin {target!r} in workspace {workspace!r}")
        return await self.router.call(workspace, target, method, args, timeout)

    def get_plugin(self, workspace: str, name: str):
        return self.router.get_plugin(workspace, name)

    async def ensure_running(self, workspace: str, name: str) -> Registration | None:
        """Return the live registration, launching the installed plugin on
        demand. Returns None when the target belongs to the controlling hub."""
        reg = self.router.lookup(workspace, name)
        if reg is not None:
            return reg
        record = self._installed_record(workspace, name)
        if record is None:
            if self.controller is not None:
                return None
            raise NoSuchPlugin(f"no plugin {name!r} in workspace {workspace!r}")
        async with self._launch_lock:
            reg = self.router.lookup(workspace, name)
            if reg is not None:
                return reg
            return await self._launch_record(workspace, record)

    def _installed_record(self, workspace: str, name: str) -> InstalledPlugin | None:
        record = None
        if self.store.has_workspace(workspace):
            record = self.store.get_workspace(workspace).plugins.get(name)
        if record is None:
            # another process may have installed since the store was opened
            try:
                self.store.reload()
            except Exception as e:
                logger.warning("store reload failed: %s", e)
                return None
            if self.store.has_workspace(workspace):
                record = self.store.get_workspace(workspace).plugins.get(name)
        return record

    async def launch_plugin(self, workspace: str, name: str) -> Registration:
        reg = await self.ensure_running(workspace, name)
        if reg is None:
            raise NoSuchPlugin(f"no plugin {name!r} in workspace {workspace!r}")
        return reg

    async def run_plugin(self, workspace: str, name: str) -> object:
        """Launch and invoke the plugin's start behavior (its ``run`` export)."""
        reg = await self.launch_plugin(workspace, name)
        if START_METHOD not in reg.methods:
            return None
        return await self.call(workspace, name, START_METHOD, [])

    async def _launch_record(self, workspace: str, record: InstalledPlugin) -> Registration:
        resolved = resolve_tag(record.spec, record.chosen_tag)
        kind = record.spec.runtime_kind
        name = record.spec.name
        if kind == "worker":
            instance = instantiate(
                parse_script(resolved.effective_code.get("script", "")),
                WorkerBridge(self, workspace, name),
                plugin_id=name,
                fuel_limit=self.config.fuel_limit,
            )
            return self.router.register_interface(
                workspace, name, instance.methods, InstanceRoute(instance), kind="worker"
            )
        if kind == "native":
            assignment = self.assignments.get((workspace, name), "local")
            if assignment == "local":
                return await self._launch_native_local(workspace, resolved)
            return await self._launch_native_remote(workspace, record, assignment)
        raise RemoteError("WindowRuntime", f"{name!r} is a window plugin; it runs in a workbench")

    async def _launch_native_local(self, workspace: str, resolved) -> Registration:
        env_spec = EnvSpec(requirements=resolved.effective_requirements, workspace=workspace)
        await provision_env(env_spec, self.providers, Path(self.config.data_root))
        await self.supervisor.launch(resolved, workspace)
        reg = self.router.lookup(workspace, resolved.spec.name)
        if reg is None:
            raise NoSuchPlugin(f"{resolved.spec.name!r} never registered its interface")
        return reg

    async def _launch_native_remote(
        self, workspace: str, record: InstalledPlugin, link_id: str
    ) -> Registration:
        link = self.links.get(link_id)
        if link is None:
            raise NoSuchEngine(f"engine {link_id!r} is not attached")
        result = await link.session.call_remote(
            ENGINE_IFACE,
            "launch",
            [
                {
                    "source": record.spec.raw_source,
                    "workspace": workspace,
                    "tag": record.chosen_tag,
                }
            ],
            workspace=SYSTEM_WORKSPACE,
        )
        methods = list(result.get("methods", [])) if isinstance(result, dict) else []
        return self.router.register_interface(
            workspace,
            record.spec.name,
            methods,
            LinkRoute(link.session, link_id),
            kind="remote",
            engine=link_id,
        )

    # -- engine links ------------------------------------------------------------

    async def attach_remote_engine(self, url: str, token: str | None = None) -> EngineLink:
        """Connect to a hub running in engine mode and keep the link."""
        target = url
        for prefix in ("tcp://",):
            if target.startswith(prefix):
                target = target[len(prefix) :]
        if target.startswith(("ws://", "wss://")):
            session = await self._connect_ws(target, token)
        else:
            host, _, port = target.rpartition(":")
            try:
                session = await open_tcp_session(
                    host or "127.0.0.1",
                    int(port),
                    role="hub",
                    token=token,
                    call_timeout=self.config.call_timeout,
                    handshake_timeout=self.config.handshake_timeout,
                )
            except (ConnectionError, OSError, ValueError) as e:
                raise ConnectFailed(f"connecting to {url!r}: {e}") from e
        if session.peer_role != "engine":
            await session.close()
            raise ConnectFailed(f"{url!r} is not an engine endpoint")
        self._link_seq += 1
        link = EngineLink(link_id=f"engine-{self._link_seq}", url=url, session=session)
        session.call_handler = self._trusted_call_handler
        session.on_log = self._on_session_log
        session.on_progress = self._on_session_progress
        session.on_closed.append(self._on_session_closed)
        self._sessions.add(session)
        self.links[link.link_id] = link
        try:
            status = await session.call_remote(
                ENGINE_IFACE, "status", [], workspace=SYSTEM_WORKSPACE, timeout=10.0
            )
            if isinstance(status, dict):
                link.capabilities = list(status.get("capabilities", []))
        except HubError:
            pass
        return link

    async def _connect_ws(self, url: str, token: str | None) -> Session:
        from websockets.asyncio.client import connect

        try:
            ws = await connect(url)
        except Exception as e:
            raise ConnectFailed(f"connecting to {url!r}: {e}") from e
        session = Session(
            WsTransport(ws),
            local_role="hub",
            call_timeout=self.config.call_timeout,
            handshake_timeout=self.config.handshake_timeout,
        )
        await session.handshake_connect(token=token)
        return session

    def assign_plugin_engine(self, workspace: str, plugin_name: str, engine: str) -> None:
        """Pin a plugin's launches to ``local`` or an attached engine link."""
        if engine != "local" and engine not in self.links:
            raise NoSuchEngine(f"engine {engine!r} is not attached")
        self.assignments[(workspace, plugin_name)] = engine
        # a future launch should honor the new assignment
        reg = self.router.lookup(workspace, plugin_name)
        if reg is not None and reg.meta.get("kind") in ("native", "remote"):
            self.router.unregister(workspace, plugin_name)

    # -- reserved interfaces -------------------------------------------------------

    async def _engine_iface_call(self, call: Call) -> object:
        args = call.args
        if call.method == "status":
            return {
                "capabilities": self.providers.prefixes,
                "plugins": [
                    {
                        "workspace": h.workspace,
                        "plugin": h.plugin_id,
                        "state": h.state,
                        "restarts": h.restart_count,
                    }
                    for h in self.supervisor.handles.values()
                ],
            }
        if call.method == "provision":
            spec = EnvSpec(requirements=list(args[0]), workspace=str(args[1]))
            self.store.create_workspace(spec.workspace)
            handle = await provision_env(spec, self.providers, Path(self.config.data_root))
            return {
                "env_dir": str(handle.env_dir),
                "outcomes": [
                    {"requirement": o.requirement, "provider": o.provider} for o in handle.outcomes
                ],
            }
        if call.method == "launch":
            req = args[0]
            source, workspace = req["source"], req["workspace"]
            self.store.create_workspace(workspace)
            from ..pluginfile import parse_plugin_file

            spec = parse_plugin_file(source)
            resolved = resolve_tag(spec, req.get("tag"))
            reg = await self._launch_native_local(workspace, resolved)
            return {"methods": reg.methods}
        if call.method == "terminate":
            workspace, name = str(args[0]), str(args[1])
            handle = self.supervisor.handles.get((workspace, name))
            if handle is not None:
                await self.supervisor.terminate(handle, "controller request")
                self.router.unregister(workspace, name)
            return None
        raise NoSuchMethod(f"{ENGINE_IFACE} has no method {call.method!r}")

    async def _hub_iface_call(self, session: Session, call: Call) -> object:
        args = call.args
        method = call.method
        if method == "list_workspaces":
            return self.store.list_workspaces()
        if method == "list_plugins":
            return [self._plugin_info(str(args[0]), p) for p in self.store.list_plugins(str(args[0]))]
        if method == "install":
            report = await self.install_from_url(str(args[0]))
            return report.to_dict()
        if method == "launch":
            reg = await self.launch_plugin(str(args[0]), str(args[1]))
            return {"methods": reg.methods}
        if method == "run":
            return await self.run_plugin(str(args[0]), str(args[1]))
        if method == "assign_engine":
            self.assign_plugin_engine(str(args[0]), str(args[1]), str(args[2]))
            return None
        if method == "engines":
            return [
                {"id": link.link_id, "url": link.url, "capabilities": link.capabilities}
                for link in self.links.values()
            ]
        if method == "attach_engine":
            link = await self.attach_remote_engine(str(args[0]), args[1] if len(args) > 1 else None)
            return {"id": link.link_id, "capabilities": link.capabilities}
        if method == "create_workspace":
            self.store.create_workspace(str(args[0]))
            return None
        if method == "remove_plugin":
            self.store.remove_plugin(str(args[0]), str(args[1]))
            self.router.unregister(str(args[0]), str(args[1]))
            return None
        if method == "get_logs":
            ring = self.log_rings.get((str(args[0]), str(args[1])))
            return [[level, text] for level, text in ring] if ring is not None else []
        if method == "run_workflow":
            wf_dict, input_value = args[0], args[1]
            wf = WorkflowDef(
                name=wf_dict["name"],
                workspace=wf_dict["workspace"],
                steps=tuple(Step(s["plugin"], s["method"]) for s in wf_dict["steps"]),
                version=wf_dict.get("version", "1"),
            )
            return await run_workflow(self, wf, input_value)
        raise NoSuchMethod(f"{HUB_IFACE} has no method {method!r}")

    def _plugin_info(self, workspace: str, record: InstalledPlugin) -> dict:
        reg = self.router.lookup(workspace, record.name)
        handle = self.supervisor.handles.get((workspace, record.name))
        if handle is not None and handle.state in ("failed", "terminated") and reg is None:
            state = handle.state
        elif reg is not None:
            state = "running"
        else:
            state = "installed"
        return {
            "name": record.name,
            "runtime_kind": record.spec.runtime_kind,
            "version": record.spec.version,
            "description": record.spec.description,
            "helper": record.helper,
            "content_hash": record.content_hash,
            "origin": record.origin,
            "pin": record.pin,
            "chosen_tag": record.chosen_tag,
            "state": state,
            "engine": self.assignments.get((workspace, record.name), "local"),
        }

    # -- installs -------------------------------------------------------------------

    async def install_from_url(self, url: str):
        """Link install against the hub's fetcher, with progress fan-out."""
        loop = asyncio.get_running_loop()

        def on_event(event):
            loop.call_soon_threadsafe(self._broadcast_install_event, event)

        installer = Installer(
            self.store,
            self.fetcher,
            content_base=self.config.content_base,
            default_ref=self.config.default_ref,
            on_event=on_event,
        )
        report = await asyncio.to_thread(installer.install_from_url, url)
        if report.started is not None:
            try:
                await self.run_plugin(report.workspace, report.started)
            except HubError as e:
                from ..registry import InstallEvent

                report.events.append(InstallEvent("start-error", str(e), 1.0))
        return report

    def _broadcast_install_event(self, event) -> None:
        detail = event.detail if event.step in ("fetch", "install", "start") else event.step
        self.broadcast_progress("__install__", event.fraction, detail)

    # -- log / progress fan-out --------------------------------------------------------

    def _ring(self, workspace: str, plugin_id: str):
        key = (workspace, plugin_id)
        if key not in self.log_rings:
            from collections import deque

            self.log_rings[key] = deque(maxlen=1000)
        return self.log_rings[key]

    def on_plugin_log(self, workspace: str, plugin_id: str, level: str, text: str) -> None:
        self._ring(workspace, plugin_id).append((level, text))
        self._fanout(Log(plugin_id=plugin_id, level=level, text=text))

    def on_plugin_progress(self, workspace: str, plugin_id: str, fraction: float) -> None:
        fraction = min(1.0, max(0.0, float(fraction)))
        self._fanout(Progress(plugin_id=plugin_id, fraction=fraction))

    def broadcast_progress(self, plugin_id: str, fraction: float, detail: str = "") -> None:
        if detail:
            self._fanout(Log(plugin_id=plugin_id, level="progress", text=detail))
        self._fanout(Progress(plugin_id=plugin_id, fraction=min(1.0, max(0.0, fraction))))

    def _fanout(self, msg) -> None:
        targets = list(self.client_sessions)
        if self.controller is not None:
            targets.append(self.controller)
        for session in targets:
            if not session.closed:
                task = asyncio.get_running_loop().create_task(self._send_quietly(session, msg))
                self._accept_tasks.add(task)
                task.add_done_callback(self._accept_tasks.discard)

    @staticmethod
    async def _send_quietly(session: Session, msg) -> None:
        try:
            await session.send(msg)
        except HubError:
            pass

    def _on_session_log(self, session: Session, msg: Log) -> None:
        workspace = session.context.get("workspace")
        plugin_id = session.context.get("plugin_id", msg.plugin_id)
        if session.peer_role == "plugin" and workspace is not None:
            self.on_plugin_log(workspace, plugin_id, msg.level, msg.text)
        else:
            # relayed from an engine link: fan out as-is
            self._fanout(msg)

    def _on_session_progress(self, session: Session, msg: Progress) -> None:
        workspace = session.context.get("workspace")
        plugin_id = session.context.get("plugin_id", msg.plugin_id)
        if session.peer_role == "plugin" and workspace is not None:
            self.on_plugin_progress(workspace, plugin_id, msg.fraction)
        else:
            self._fanout(msg)

    # -- static UI over the websocket listener -------------------------------------------

    _CONTENT_TYPES = {
        ".html": "text/html; charset=utf-8",
        ".js": "text/javascript; charset=utf-8",
        ".mjs": "text/javascript; charset=utf-8",
        ".css": "text/css; charset=utf-8",
        ".json": "application/json",
        ".svg": "image/svg+xml",
        ".png": "image/png",
        ".ico": "image/x-icon",
        ".map": "application/json",
    }

    def _process_http(self, connection, request):
        """Serve the workbench's static files; `/ws` upgrades to the protocol."""
        path = request.path.split("?", 1)[0]
        if path == "/ws":
            return None
        if self.config.ui_dir is None:
            return connection.respond(404, "no UI bundled; connect to /ws\n")
        if path in ("", "/"):
            path = "/index.html"
        root = Path(self.config.ui_dir).resolve()
        target = (root / path.lstrip("/")).resolve()
        if not str(target).startswith(str(root)) or not target.is_file():
            return connection.respond(404, "not found\n")
        return self._file_response(target)

    def _file_response(self, target: Path):
        from websockets.datastructures import Headers
        from websockets.http11 import Response

        body = target.read_bytes()
        headers = Headers()
        headers["Content-Type"] = self._CONTENT_TYPES.get(
            target.suffix, "application/octet-stream"
        )
        headers["Content-Length"] = str(len(body))
        return Response(200, "OK", headers, body)
