"""Native plugin supervision, environment provisioning and the hub server."""

from .providers import (
    EnvHandle,
    EnvSpec,
    NullProvider,
    ProcessProvider,
    ProviderRegistry,
    provision_env,
)
from .supervisor import NativeSupervisor, PluginHandle
from .hub import EngineLink, Hub, HubConfig

__all__ = [
    "EngineLink",
    "EnvHandle",
    "EnvSpec",
    "Hub",
    "HubConfig",
    "NativeSupervisor",
    "NullProvider",
    "PluginHandle",
    "ProcessProvider",
    "ProviderRegistry",
    "provision_env",
]
