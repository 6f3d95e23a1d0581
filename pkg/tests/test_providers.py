"""Environment provisioning: providers, digests, isolation."""

import asyncio

import pytest

from pluginhub.engine.providers import (
    EnvSpec,
    ProviderRegistry,
    env_digest,
    provision_env,
)
from pluginhub.errors import ProvisionFailed, UnknownProvider

from conftest import async_test


@async_test
async def test_empty_requirements():
    registry = ProviderRegistry.with_defaults()
    handle = await provision_env(EnvSpec([], "w1"), registry, tmp_dir())
    assert handle.outcomes == ()
    assert handle.env_dir.is_dir()


_tmp_counter = 0


def tmp_dir():
    import tempfile
    from pathlib import Path

    global _tmp_counter
    _tmp_counter += 1
    return Path(tempfile.mkdtemp(prefix=f"envtest{_tmp_counter}-"))


@async_test
async def test_null_provider_records():
    registry = ProviderRegistry.with_defaults()
    handle = await provision_env(EnvSpec(["none:stub-cpu"], "w1"), registry, tmp_dir())
    assert handle.outcomes[0].requirement == "none:stub-cpu"
    assert handle.outcomes[0].provider == "none"


@async_test
async def test_process_provider_failure():
    registry = ProviderRegistry.with_defaults()
    with pytest.raises(ProvisionFailed) as exc:
        await provision_env(EnvSpec(["cmd:false"], "w1"), registry, tmp_dir())
    assert exc.value.exit_code == 1


@async_test
async def test_process_provider_success_and_output():
    registry = ProviderRegistry.with_defaults()
    handle = await provision_env(EnvSpec(["cmd:echo hello"], "w1"), registry, tmp_dir())
    assert handle.outcomes[0].detail == "hello"


@async_test
async def test_unknown_provider():
    registry = ProviderRegistry.with_defaults()
    with pytest.raises(UnknownProvider) as exc:
        await provision_env(EnvSpec(["conda:numpy"], "w1"), registry, tmp_dir())
    assert exc.value.prefix == "conda"


@async_test
async def test_unknown_prefix_checked_before_any_effect():
    registry = ProviderRegistry.with_defaults()
    root = tmp_dir()
    with pytest.raises(UnknownProvider):
        await provision_env(
            EnvSpec(["cmd:touch should-not-exist", "alien:x"], "w1"), registry, root
        )
    assert not list(root.rglob("should-not-exist"))


@async_test
async def test_conflicting_requirements_get_disjoint_dirs():
    registry = ProviderRegistry.with_defaults()
    root = tmp_dir()
    a = await provision_env(EnvSpec(["cmd:touch marker-a"], "w1"), registry, root)
    b = await provision_env(EnvSpec(["cmd:touch marker-b"], "w1"), registry, root)
    assert a.env_dir != b.env_dir
    assert (a.env_dir / "marker-a").exists()
    assert not (a.env_dir / "marker-b").exists()
    assert (b.env_dir / "marker-b").exists()
    assert not (b.env_dir / "marker-a").exists()


def test_digest_is_stable_and_order_sensitive():
    assert env_digest(["none:a", "none:b"]) == env_digest(["none:a", "none:b"])
    assert env_digest(["none:a"]) != env_digest(["none:b"])


def test_custom_command_template():
    registry = ProviderRegistry.with_defaults({"pkg": ["/bin/sh", "-c", "echo installing {payload}"]})

    async def go():
        handle = await provision_env(EnvSpec(["pkg:numpy"], "w1"), registry, tmp_dir())
        return handle.outcomes[0].detail

    assert asyncio.run(go()) == "installing numpy"
