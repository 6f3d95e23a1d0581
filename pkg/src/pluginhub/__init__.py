"""Plugin orchestration hub.

Single-file plugins live in isolated workspaces, call each other through a
transparent bidirectional RPC layer, install from shareable URLs with
version pinning, execute in an embedded sandboxed script runtime or as
supervised native processes, and compose into shareable workflows.
"""

__version__ = "0.1.0"

from . import errors
from .pluginfile import (
    PluginSpec,
    ResolvedPlugin,
    Violation,
    parse_plugin_file,
    resolve_tag,
    serialize_plugin_file,
    validate_spec,
)
from .script import PluginInstance, Program, instantiate, parse_script

__all__ = [
    "PluginInstance",
    "PluginSpec",
    "Program",
    "ResolvedPlugin",
    "Violation",
    "errors",
    "instantiate",
    "parse_plugin_file",
    "parse_script",
    "resolve_tag",
    "serialize_plugin_file",
    "validate_spec",
]
