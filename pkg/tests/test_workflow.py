"""Workflow chaining and URL round-trips."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pluginhub.errors import MalformedDef, NotAWorkflowUrl, StepFailed
from pluginhub.rpc import Router
from pluginhub.rpc.router import InstanceRoute
from pluginhub.script import instantiate, parse_script
from pluginhub.workflow import (
    Step,
    WorkflowDef,
    encode_workflow_url,
    parse_workflow_url,
    run_workflow,
)

from conftest import async_test


def make_router() -> Router:
    router = Router()
    for name, src in (
        ("calculator", "fn calc_exp(x) = exp(x)"),
        ("double", "fn apply(x) = x * 2"),
        ("shift", "fn apply(x) = x + 10"),
    ):
        inst = instantiate(parse_script(src), plugin_id=name)
        router.register_interface("w1", name, inst.methods, InstanceRoute(inst))
    return router


class TestRun:
    @async_test
    async def test_single_step_is_plain_call(self):
        wf = WorkflowDef("single", "w1", (Step("calculator", "calc_exp"),))
        assert await run_workflow(make_router(), wf, 0.0) == 1.0

    @async_test
    async def test_two_steps_compose(self):
        wf = WorkflowDef("quad", "w1", (Step("double", "apply"), Step("double", "apply")))
        assert await run_workflow(make_router(), wf, 3.0) == 12.0

    @async_test
    async def test_missing_plugin_fails_with_step_index(self):
        wf = WorkflowDef(
            "broken", "w1", (Step("calculator", "calc_exp"), Step("missing", "op"))
        )
        with pytest.raises(StepFailed) as exc:
            await run_workflow(make_router(), wf, 0.0)
        assert exc.value.index == 1
        assert type(exc.value.inner).__name__ == "NoSuchPlugin"

    @async_test
    async def test_chain_equals_direct_composition(self):
        router = make_router()
        wf = WorkflowDef("chain", "w1", (Step("double", "apply"), Step("shift", "apply")))
        rng = random.Random(7)
        for _ in range(100):
            x = rng.uniform(-100, 100)
            via_chain = await run_workflow(router, wf, x)
            direct = await router.call(
                "w1", "shift", "apply", [await router.call("w1", "double", "apply", [x])]
            )
            assert via_chain == direct

    @async_test
    async def test_workspace_scoping(self):
        wf = WorkflowDef("elsewhere", "w2", (Step("double", "apply"),))
        with pytest.raises(StepFailed) as exc:
            await run_workflow(make_router(), wf, 1.0)
        assert exc.value.index == 0


class TestUrl:
    def test_round_trip(self):
        wf = WorkflowDef(
            "demo", "w1", (Step("ask", "prompt"), Step("calculator", "calc_exp"))
        )
        url = encode_workflow_url("https://hub.local", wf)
        assert url.startswith("https://hub.local/#/workflow?def=")
        assert parse_workflow_url(url) == wf

    def test_zero_steps_refused(self):
        with pytest.raises(MalformedDef):
            encode_workflow_url("https://x", WorkflowDef("empty", "w1", ()))

    def test_tampered_payload_rejected(self):
        wf = WorkflowDef("demo", "w1", (Step("a", "b"),))
        url = encode_workflow_url("https://x", wf)
        with pytest.raises(MalformedDef):
            parse_workflow_url(url[:-6] + "cccc")

    def test_not_a_workflow_url(self):
        with pytest.raises(NotAWorkflowUrl):
            parse_workflow_url("https://x/#/app?plugin=o/r:P")

    def test_missing_def(self):
        with pytest.raises(MalformedDef):
            parse_workflow_url("https://x/#/workflow?other=1")


_names = st.text(
    st.sampled_from(list("abcdefghijklmnopqrstuvwxyz-_0123456789")), min_size=1, max_size=16
)


@given(
    _names,
    _names,
    st.lists(st.tuples(_names, _names), min_size=1, max_size=6),
)
@settings(max_examples=120, deadline=None)
def test_url_round_trip_randomized(name, workspace, steps):
    wf = WorkflowDef(name, workspace, tuple(Step(p, m) for p, m in steps))
    assert parse_workflow_url(encode_workflow_url("https://base", wf)) == wf
