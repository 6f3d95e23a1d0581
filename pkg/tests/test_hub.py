"""Hub integration: lazy launches, native children, engines, containment."""

import asyncio
import contextlib
import random
import sys
from pathlib import Path

import pytest

from pluginhub.engine.hub import Hub, HubConfig
from pluginhub.engine.supervisor import STATE_FAILED, STATE_READY, STATE_TERMINATED
from pluginhub.errors import (
    AuthFailed,
    NoSuchEngine,
    NoSuchPlugin,
    ReadyTimeout,
    RemoteError,
    SessionClosed,
    SpawnError,
)
from pluginhub.rpc.session import open_tcp_session

from conftest import async_test, make_plugin_source

HELPERS = Path(__file__).parent / "helpers"

E_1 = 2.718281828459045


def hub_config(tmp_path, name="data", **overrides) -> HubConfig:
    defaults = dict(
        data_root=tmp_path / name,
        port=0,
        kill_grace=0.5,
        ready_timeout=15.0,
        handshake_timeout=5.0,
        call_timeout=20.0,
    )
    defaults.update(overrides)
    return HubConfig(**defaults)


@contextlib.asynccontextmanager
async def make_hub(tmp_path, name="data", **overrides):
    hub = Hub(hub_config(tmp_path, name, **overrides))
    await hub.start()
    try:
        yield hub
    finally:
        await hub.aclose()


def install_worker(hub, workspace, name, script):
    hub.store.create_workspace(workspace)
    hub.store.install_plugin(workspace, make_plugin_source(name, script))


def install_native(hub, workspace, name, script, extra_config=None):
    hub.store.create_workspace(workspace)
    hub.store.install_plugin(
        workspace, make_plugin_source(name, script, kind="native", extra_config=extra_config)
    )


class FnRoute:
    """Test-only route backed by plain async functions."""

    def __init__(self, fns):
        self.fns = fns

    async def call(self, reg, method, args, timeout):
        return await self.fns[method](*args)


class TestWorkers:
    @async_test
    async def test_worker_lazy_launch_and_call(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            result = await hub.call("w1", "calculator", "calc_exp", [1.0])
            assert result == pytest.approx(E_1, rel=1e-12)

    @async_test
    async def test_worker_obtains_peer_and_calls_it(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            install_worker(
                hub, "w1", "getPlugin-demo", 'fn run() = call("calculator", "calc_exp", 1)'
            )
            result = await hub.run_plugin("w1", "getPlugin-demo")
            assert result == pytest.approx(E_1, rel=1e-12)

    @async_test
    async def test_worker_isolation_between_workspaces(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            install_worker(hub, "w2", "demo", 'fn run() = call("calculator", "calc_exp", 1)')
            with pytest.raises(RemoteError) as exc:
                await hub.run_plugin("w2", "demo")
            assert "BridgeError" in exc.value.remote_code

    @async_test
    async def test_uninstalled_plugin(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            hub.store.create_workspace("w1")
            with pytest.raises(NoSuchPlugin):
                await hub.call("w1", "ghost", "m", [])

    @async_test
    async def test_window_plugin_refuses_headless_launch(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            hub.store.create_workspace("w1")
            source = (
                '<config>\n{"name": "viewer", "type": "window", "version": "1.0.0",'
                ' "api_version": "0.1"}\n</config>\n<window>\n<div/>\n</window>\n'
            )
            hub.store.install_plugin("w1", source)
            with pytest.raises(RemoteError) as exc:
                await hub.call("w1", "viewer", "run", [])
            assert exc.value.remote_code == "WindowRuntime"


class TestNative:
    @async_test
    async def test_native_end_to_end(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_native(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            result = await hub.call("w1", "calculator", "calc_exp", [1.0])
            assert result == pytest.approx(E_1, rel=1e-12)
            handle = hub.supervisor.handles[("w1", "calculator")]
            assert handle.state == STATE_READY
            await hub.supervisor.terminate(handle, "test over")
            assert handle.state == STATE_TERMINATED

    @async_test
    async def test_native_worker_value_transparency(self, tmp_path):
        script = "fn calc_exp(x) = exp(x)"
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calc-worker", script)
            install_native(hub, "w1", "calc-native", script)
            for x in (0.0, 1.0, -1.0, 10.0):
                local = await hub.call("w1", "calc-worker", "calc_exp", [x])
                remote = await hub.call("w1", "calc-native", "calc_exp", [x])
                assert local == remote

    @async_test
    async def test_native_calls_back_into_worker(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            install_native(hub, "w1", "bridge", 'fn go(x) = call("calculator", "calc_exp", x)')
            result = await hub.call("w1", "bridge", "go", [1.0])
            assert result == pytest.approx(E_1, rel=1e-12)

    @async_test
    async def test_spawn_error_when_shim_missing(self, tmp_path):
        async with make_hub(tmp_path, shim_command=["/nonexistent-shim"]) as hub:
            install_native(hub, "w1", "p", "fn f(x) = x")
            with pytest.raises(SpawnError):
                await hub.call("w1", "p", "f", [1])

    @async_test
    async def test_ready_timeout_when_child_never_handshakes(self, tmp_path):
        cmd = [sys.executable, "-c", "import time; time.sleep(60)"]
        async with make_hub(tmp_path, shim_command=cmd, ready_timeout=0.8) as hub:
            install_native(hub, "w1", "p", "fn f(x) = x")
            with pytest.raises(ReadyTimeout):
                await hub.call("w1", "p", "f", [1])

    @async_test
    async def test_child_exit_before_iface_fails_launch(self, tmp_path):
        cmd = [sys.executable, str(HELPERS / "fault_shim.py"), "--mode", "no-iface"]
        async with make_hub(tmp_path, shim_command=cmd) as hub:
            install_native(hub, "w1", "p", "fn f(x) = x")
            with pytest.raises((SpawnError, ReadyTimeout)):
                await hub.call("w1", "p", "f", [1])

    @async_test
    async def test_auth_failed_child(self, tmp_path):
        async with make_hub(tmp_path, token="right-token") as hub:
            hub.supervisor.token = "wrong-token"
            install_native(hub, "w1", "p", "fn f(x) = x")
            with pytest.raises((AuthFailed, SpawnError)):
                await hub.call("w1", "p", "f", [1])

    @async_test
    async def test_stderr_captured_into_log_ring(self, tmp_path):
        cmd = [
            sys.executable,
            "-c",
            "import sys; print('wailing into the night', file=sys.stderr); sys.exit(7)",
        ]
        async with make_hub(tmp_path, shim_command=cmd, ready_timeout=5.0) as hub:
            install_native(hub, "w1", "p", "fn f(x) = x")
            with pytest.raises((SpawnError, ReadyTimeout)):
                await hub.call("w1", "p", "f", [1])
            handle = hub.supervisor.handles[("w1", "p")]
            assert ("stderr", "wailing into the night") in list(handle.log_ring)

    @async_test
    async def test_restart_after_crash(self, tmp_path):
        async with make_hub(tmp_path, restart_limit=1) as hub:
            install_native(hub, "w1", "echoer", "fn echo(x) = x")
            assert await hub.call("w1", "echoer", "echo", [5]) == 5
            handle = hub.supervisor.handles[("w1", "echoer")]
            handle.process.kill()
            for _ in range(100):
                await asyncio.sleep(0.05)
                if handle.restart_count == 1 and handle.state == STATE_READY:
                    break
            assert handle.restart_count == 1
            assert await hub.call("w1", "echoer", "echo", [6]) == 6

    @async_test
    async def test_terminate_is_idempotent(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_native(hub, "w1", "p", "fn f(x) = x")
            await hub.call("w1", "p", "f", [1])
            handle = hub.supervisor.handles[("w1", "p")]
            await hub.supervisor.terminate(handle, "once")
            await hub.supervisor.terminate(handle, "twice")
            assert handle.state == STATE_TERMINATED


class TestContainment:
    @async_test
    async def test_sigkill_mid_call_delivers_session_closed(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            gate = asyncio.Event()

            async def wait(x):
                await gate.wait()
                return x

            hub.store.create_workspace("w1")
            hub.router.register_interface("w1", "gate", ["wait"], FnRoute({"wait": wait}))
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            install_native(hub, "w1", "victim", 'fn hang(x) = call("gate", "wait", x)')

            task = asyncio.ensure_future(hub.call("w1", "victim", "hang", [1]))
            for _ in range(100):
                await asyncio.sleep(0.02)
                if ("w1", "victim") in hub.supervisor.handles:
                    handle = hub.supervisor.handles[("w1", "victim")]
                    if handle.state == STATE_READY and not task.done():
                        break
            await asyncio.sleep(0.2)  # let the call reach the child
            handle = hub.supervisor.handles[("w1", "victim")]
            handle.process.kill()
            with pytest.raises(SessionClosed):
                await asyncio.wait_for(task, 5.0)
            # the hub keeps serving other plugins
            result = await hub.call("w1", "calculator", "calc_exp", [1.0])
            assert result == pytest.approx(E_1, rel=1e-12)
            gate.set()

    @async_test
    async def test_garbage_frames_contained(self, tmp_path):
        cmd = [sys.executable, str(HELPERS / "fault_shim.py"), "--mode", "garbage"]
        async with make_hub(tmp_path, shim_command=cmd) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            install_native(hub, "w1", "saboteur", "fn boom(x) = x")
            with pytest.raises(SessionClosed):
                await asyncio.wait_for(hub.call("w1", "saboteur", "boom", [1]), 10.0)
            result = await hub.call("w1", "calculator", "calc_exp", [0.0])
            assert result == 1.0


class TestSessions:
    @async_test
    async def test_client_session_calls_with_workspace(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            client = await open_tcp_session("127.0.0.1", hub.tcp_port, role="client")
            result = await client.call_remote("calculator", "calc_exp", [1.0], workspace="w1")
            assert result == pytest.approx(E_1, rel=1e-12)
            with pytest.raises(NoSuchPlugin):
                await client.call_remote("calculator", "calc_exp", [1.0], workspace="w2")
            await client.close()

    @async_test
    async def test_token_required_for_clients(self, tmp_path):
        async with make_hub(tmp_path, token="sesame") as hub:
            with pytest.raises(AuthFailed):
                await open_tcp_session("127.0.0.1", hub.tcp_port, role="client", token="nope")
            client = await open_tcp_session(
                "127.0.0.1", hub.tcp_port, role="client", token="sesame"
            )
            assert client.authenticated
            await client.close()

    @async_test
    async def test_hub_iface_flow(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            client = await open_tcp_session("127.0.0.1", hub.tcp_port, role="client")
            workspaces = await client.call_remote("__hub__", "list_workspaces", [])
            assert workspaces == ["w1"]
            plugins = await client.call_remote("__hub__", "list_plugins", ["w1"])
            assert plugins[0]["name"] == "calculator"
            assert plugins[0]["state"] == "installed"
            launched = await client.call_remote("__hub__", "launch", ["w1", "calculator"])
            assert launched["methods"] == ["calc_exp"]
            plugins = await client.call_remote("__hub__", "list_plugins", ["w1"])
            assert plugins[0]["state"] == "running"
            await client.close()

    @async_test
    async def test_engine_iface_hidden_outside_engine_mode(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            client = await open_tcp_session("127.0.0.1", hub.tcp_port, role="client")
            with pytest.raises(NoSuchPlugin):
                await client.call_remote("__engine__", "status", [])
            await client.close()

    @async_test
    async def test_log_fanout_to_clients(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            install_worker(hub, "w1", "noisy", 'fn say(t) = emit_log("info", t)')
            client = await open_tcp_session("127.0.0.1", hub.tcp_port, role="client")
            seen = []
            client.on_log = lambda s, msg: seen.append((msg.plugin_id, msg.level, msg.text))
            for text in ("one", "two", "three"):
                await client.call_remote("noisy", "say", [text], workspace="w1")
            for _ in range(50):
                await asyncio.sleep(0.02)
                if len(seen) == 3:
                    break
            assert seen == [("noisy", "info", t) for t in ("one", "two", "three")]
            ring = await client.call_remote("__hub__", "get_logs", ["w1", "noisy"])
            assert ring == [["info", "one"], ["info", "two"], ["info", "three"]]
            await client.close()

    @async_test
    async def test_ws_listener_speaks_protocol(self, tmp_path):
        async with make_hub(tmp_path, ws_port=0) as hub:
            install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
            from websockets.asyncio.client import connect

            from pluginhub.rpc.session import Session, WsTransport

            async with connect(f"ws://127.0.0.1:{hub.ws_port}/ws") as ws:
                client = Session(WsTransport(ws), local_role="client")
                await client.handshake_connect()
                result = await client.call_remote(
                    "calculator", "calc_exp", [1.0], workspace="w1"
                )
                assert result == pytest.approx(E_1, rel=1e-12)
                await client.close()

    @async_test
    async def test_static_ui_served(self, tmp_path):
        ui = tmp_path / "ui"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>workbench</body></html>")
        (ui / "app.js").write_text("console.log('hi')")
        async with make_hub(tmp_path, ws_port=0, ui_dir=ui) as hub:
            import urllib.error
            import urllib.request

            base = f"http://127.0.0.1:{hub.ws_port}"

            def get(path: str) -> tuple[bytes, str]:
                with urllib.request.urlopen(f"{base}{path}") as r:
                    return r.read(), r.headers.get("Content-Type", "")

            body, ctype = await asyncio.to_thread(get, "/")
            assert b"workbench" in body
            assert ctype.startswith("text/html")
            body, _ = await asyncio.to_thread(get, "/app.js")
            assert b"console" in body
            with pytest.raises(urllib.error.HTTPError):
                await asyncio.to_thread(get, "/missing.txt")


class TestRemoteEngine:
    @async_test
    async def test_attach_assign_launch_transparently(self, tmp_path):
        async with make_hub(tmp_path, "engine-data", engine_mode=True) as engine:
            async with make_hub(tmp_path, "hub-data") as hub:
                install_worker(hub, "w1", "local-calc", "fn calc_exp(x) = exp(x)")
                install_native(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")

                link = await hub.attach_remote_engine(f"tcp://127.0.0.1:{engine.tcp_port}")
                assert "cmd" in link.capabilities
                hub.assign_plugin_engine("w1", "calculator", link.link_id)

                remote_result = await hub.call("w1", "calculator", "calc_exp", [1.0])
                local_result = await hub.call("w1", "local-calc", "calc_exp", [1.0])
                assert remote_result == local_result

                # the child actually lives on the engine hub
                assert ("w1", "calculator") in engine.supervisor.handles
                assert ("w1", "calculator") not in hub.supervisor.handles

    @async_test
    async def test_remote_plugin_calls_back_to_controller_workspace(self, tmp_path):
        async with make_hub(tmp_path, "engine-data", engine_mode=True) as engine:
            async with make_hub(tmp_path, "hub-data") as hub:
                install_worker(hub, "w1", "calculator", "fn calc_exp(x) = exp(x)")
                install_native(
                    hub, "w1", "proxy", 'fn go(x) = call("calculator", "calc_exp", x)'
                )
                link = await hub.attach_remote_engine(f"tcp://127.0.0.1:{engine.tcp_port}")
                hub.assign_plugin_engine("w1", "proxy", link.link_id)
                result = await hub.call("w1", "proxy", "go", [1.0])
                assert result == pytest.approx(E_1, rel=1e-12)

    @async_test
    async def test_assign_to_unknown_engine(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            with pytest.raises(NoSuchEngine):
                hub.assign_plugin_engine("w1", "p", "engine-99")

    @async_test
    async def test_wrong_engine_token(self, tmp_path):
        async with make_hub(tmp_path, "engine-data", engine_mode=True, token="t0") as engine:
            async with make_hub(tmp_path, "hub-data") as hub:
                with pytest.raises(AuthFailed):
                    await hub.attach_remote_engine(
                        f"tcp://127.0.0.1:{engine.tcp_port}", token="not-t0"
                    )


class TestConcurrency:
    @async_test
    async def test_interleaved_echo_calls_no_crosstalk(self, tmp_path):
        async with make_hub(tmp_path) as hub:
            rng = random.Random(42)
            hub.store.create_workspace("w1")
            for name in ("echo-a", "echo-b", "echo-c"):
                async def echo(x, _rng=rng):
                    await asyncio.sleep(_rng.uniform(0, 0.01))
                    return x

                hub.router.register_interface("w1", name, ["echo"], FnRoute({"echo": echo}))
            client = await open_tcp_session("127.0.0.1", hub.tcp_port, role="client")
            plugins = ["echo-a", "echo-b", "echo-c"]
            n = 200
            results = await asyncio.gather(
                *(
                    client.call_remote(plugins[i % 3], "echo", [i], workspace="w1")
                    for i in range(n)
                )
            )
            assert results == list(range(n))
            assert client.pending == {}
            await client.close()
