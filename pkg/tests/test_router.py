"""Routing: registration, workspace isolation, method dispatch."""

import asyncio

import pytest

from pluginhub.errors import DuplicatePluginId, NoSuchMethod, NoSuchPlugin, RemoteError
from pluginhub.rpc import Router
from pluginhub.rpc.router import InstanceRoute
from pluginhub.script import instantiate, parse_script

from conftest import async_test


def make_router_with_calculator(workspace="w1") -> Router:
    router = Router()
    inst = instantiate(parse_script("fn calc_exp(x) = exp(x)"), plugin_id="calculator")
    router.register_interface(workspace, "calculator", inst.methods, InstanceRoute(inst))
    return router


class TestRegistry:
    def test_register_and_get(self):
        router = make_router_with_calculator()
        handle = router.get_plugin("w1", "calculator")
        assert handle.methods == ["calc_exp"]

    def test_duplicate_rejected(self):
        router = make_router_with_calculator()
        inst = instantiate(parse_script("fn calc_exp(x) = x"))
        with pytest.raises(DuplicatePluginId):
            router.register_interface("w1", "calculator", inst.methods, InstanceRoute(inst))

    def test_same_name_other_workspace_ok(self):
        router = make_router_with_calculator()
        inst = instantiate(parse_script("fn f(x) = x"))
        router.register_interface("w2", "calculator", inst.methods, InstanceRoute(inst))
        assert router.get_plugin("w2", "calculator").methods == ["f"]

    def test_empty_methods_valid(self):
        router = Router()
        inst = instantiate(parse_script(""))
        router.register_interface("w1", "empty", inst.methods, InstanceRoute(inst))
        assert router.get_plugin("w1", "empty").methods == []

    def test_unregister(self):
        router = make_router_with_calculator()
        router.unregister("w1", "calculator")
        with pytest.raises(NoSuchPlugin):
            router.get_plugin("w1", "calculator")


class TestIsolation:
    def test_other_workspace_cannot_see_plugin(self):
        router = make_router_with_calculator()
        with pytest.raises(NoSuchPlugin):
            router.get_plugin("w2", "calculator")

    def test_empty_name(self):
        router = make_router_with_calculator()
        with pytest.raises(NoSuchPlugin):
            router.get_plugin("w1", "")

    @async_test
    async def test_cross_workspace_call_refused(self):
        router = make_router_with_calculator()
        with pytest.raises(NoSuchPlugin):
            await router.call("w2", "calculator", "calc_exp", [1.0])


class TestCalls:
    @async_test
    async def test_call_through_router(self):
        router = make_router_with_calculator()
        result = await router.call("w1", "calculator", "calc_exp", [1.0])
        assert result == pytest.approx(2.718281828459045, rel=1e-12)

    @async_test
    async def test_no_such_method(self):
        router = make_router_with_calculator()
        with pytest.raises(NoSuchMethod):
            await router.call("w1", "calculator", "calc_log", [1.0])

    @async_test
    async def test_script_failure_surfaces_as_remote_error(self):
        router = Router()
        inst = instantiate(parse_script("fn f(x) = x / 0"))
        router.register_interface("w1", "bad", inst.methods, InstanceRoute(inst))
        with pytest.raises(RemoteError) as exc:
            await router.call("w1", "bad", "f", [1.0])
        assert exc.value.remote_code == "RuntimeError"

    @async_test
    async def test_handle_attribute_sugar(self):
        router = make_router_with_calculator()
        handle = router.get_plugin("w1", "calculator")
        assert await handle.calc_exp(0.0) == 1.0
        with pytest.raises(AttributeError):
            handle.not_a_method

    @async_test
    async def test_workers_call_each_other_via_bridge(self):
        # two in-process workers; one calls the other through the router
        router = Router()

        class RouterBridge:
            def __init__(self, workspace):
                self.workspace = workspace

            async def call(self, target, method, args):
                return await router.call(self.workspace, target, method, args)

            async def emit_log(self, level, text):
                pass

            async def emit_progress(self, fraction):
                pass

        calc = instantiate(parse_script("fn calc_exp(x) = exp(x)"), RouterBridge("w1"))
        demo = instantiate(
            parse_script('fn run(x) = call("calculator", "calc_exp", x)'), RouterBridge("w1")
        )
        router.register_interface("w1", "calculator", calc.methods, InstanceRoute(calc))
        router.register_interface("w1", "demo", demo.methods, InstanceRoute(demo))
        result = await router.call("w1", "demo", "run", [1.0])
        assert result == pytest.approx(2.718281828459045, rel=1e-12)

    @async_test
    async def test_echo_pair_reentrancy(self):
        # a's slow path suspends on a bridge call served by b, which calls
        # back into a; the second invocation completes while the first waits
        router = Router()

        class RouterBridge:
            async def call(self, target, method, args):
                return await router.call("w1", target, method, args)

            async def emit_log(self, level, text):
                pass

            async def emit_progress(self, fraction):
                pass

        a = instantiate(
            parse_script('fn ping(x) = call("b", "pong", x)\nfn quick(y) = y + 1'),
            RouterBridge(),
        )
        b = instantiate(parse_script('fn pong(x) = call("a", "quick", x)'), RouterBridge())
        router.register_interface("w1", "a", a.methods, InstanceRoute(a))
        router.register_interface("w1", "b", b.methods, InstanceRoute(b))
        assert await router.call("w1", "a", "ping", [41.0]) == 42.0
