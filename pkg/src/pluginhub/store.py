"""Persistent workspaces and their installed plugins.

On-disk layout::

    <root>/<workspace>/workspace.json
    <root>/<workspace>/plugins/<name>.imjoy.html

workspace.json records the workspace name, creation time and per-plugin
metadata (origin, pin, content hash, helper flag, chosen tag, install
time); plugin sources live next to it verbatim. All timestamps are RFC
3339 UTC. Every mutation writes a temp file and renames it into place, so
a crash mid-write leaves the previous state intact. Content hashes are
verified on load; a mismatch means the store is corrupt.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

from .errors import CorruptStore, NoSuchPlugin, NoSuchWorkspace, StoreIoError
from .naming import check_name
from .pluginfile import PLUGIN_FILE_EXT, PluginSpec, parse_plugin_file

WORKSPACE_FILE = "workspace.json"
PLUGINS_DIR = "plugins"


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="microseconds")


def content_hash(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()


@dataclass
class InstalledPlugin:
    spec: PluginSpec
    origin: str  # reference string, direct URL, or "local"
    pin: str | None
    content_hash: str
    helper: bool
    chosen_tag: str | None
    installed_at: str

    @property
    def name(self) -> str:
        return self.spec.name

    def meta_dict(self) -> dict:
        return {
            "name": self.spec.name,
            "origin": self.origin,
            "pin": self.pin,
            "content_hash": self.content_hash,
            "helper": self.helper,
            "chosen_tag": self.chosen_tag,
            "installed_at": self.installed_at,
        }


@dataclass
class Workspace:
    name: str
    created_at: str
    plugins: dict[str, InstalledPlugin] = field(default_factory=dict)

    def ordered_plugins(self) -> list[InstalledPlugin]:
        return sorted(self.plugins.values(), key=lambda p: (p.installed_at, p.name))


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_bytes(data)
        os.replace(tmp, path)
    except OSError as e:
        raise StoreIoError(f"writing {path}: {e}") from e
    finally:
        if tmp.exists():
            try:
                tmp.unlink()
            except OSError:
                pass


class Store:
    """Single-writer, multi-reader workspace store rooted at a directory."""

    def __init__(self, root: Path):
        self.root = root
        self._lock = threading.Lock()
        self._workspaces: dict[str, Workspace] = {}

    # -- loading -----------------------------------------------------------

    def _load(self) -> None:
        for entry in sorted(self.root.iterdir()):
            if not entry.is_dir():
                continue
            ws_file = entry / WORKSPACE_FILE
            if not ws_file.exists():
                continue
            self._workspaces[entry.name] = self._load_workspace(entry, ws_file)

    def _load_workspace(self, ws_dir: Path, ws_file: Path) -> Workspace:
        try:
            data = json.loads(ws_file.read_text("utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CorruptStore(str(ws_file), f"unreadable workspace record: {e}") from e
        if not isinstance(data, dict) or not isinstance(data.get("name"), str):
            raise CorruptStore(str(ws_file), "workspace record has no name")
        ws = Workspace(name=data["name"], created_at=data.get("created_at", utc_now()))
        for meta in data.get("plugins", []):
            name = meta.get("name")
            if not isinstance(name, str):
                raise CorruptStore(str(ws_file), "plugin record has no name")
            src_file = ws_dir / PLUGINS_DIR / f"{name}{PLUGIN_FILE_EXT}"
            try:
                source = src_file.read_text("utf-8")
            except OSError as e:
                raise CorruptStore(str(src_file), f"missing plugin source: {e}") from e
            digest = content_hash(source)
            if digest != meta.get("content_hash"):
                raise CorruptStore(
                    str(src_file),
                    f"content hash mismatch: recorded {meta.get('content_hash')}, "
                    f"actual {digest}",
                )
            try:
                spec = parse_plugin_file(source)
            except Exception as e:
                raise CorruptStore(str(src_file), f"unparseable plugin source: {e}") from e
            ws.plugins[name] = InstalledPlugin(
                spec=spec,
                origin=meta.get("origin", "local"),
                pin=meta.get("pin"),
                content_hash=digest,
                helper=bool(meta.get("helper", False)),
                chosen_tag=meta.get("chosen_tag"),
                installed_at=meta.get("installed_at", utc_now()),
            )
        return ws

    # -- persistence -------------------------------------------------------

    def _ws_dir(self, name: str) -> Path:
        return self.root / name

    def _persist_workspace(self, ws: Workspace) -> None:
        record = {
            "name": ws.name,
            "created_at": ws.created_at,
            "plugins": [p.meta_dict() for p in ws.ordered_plugins()],
        }
        payload = json.dumps(record, indent=2, sort_keys=True).encode("utf-8")
        _atomic_write(self._ws_dir(ws.name) / WORKSPACE_FILE, payload)

    # -- public API --------------------------------------------------------

    def reload(self) -> None:
        """Re-read the on-disk state, picking up writes by other processes."""
        with self._lock:
            fresh: dict[str, Workspace] = {}
            workspaces = self._workspaces
            self._workspaces = fresh
            try:
                self._load()
            except Exception:
                self._workspaces = workspaces
                raise

    def list_workspaces(self) -> list[str]:
        return sorted(self._workspaces)

    def get_workspace(self, name: str) -> Workspace:
        ws = self._workspaces.get(name)
        if ws is None:
            raise NoSuchWorkspace(f"no workspace {name!r}")
        return ws

    def has_workspace(self, name: str) -> bool:
        return name in self._workspaces

    def create_workspace(self, name: str) -> Workspace:
        """Create (or return the existing) workspace; idempotent."""
        check_name(name, "workspace name")
        with self._lock:
            existing = self._workspaces.get(name)
            if existing is not None:
                return existing
            ws = Workspace(name=name, created_at=utc_now())
            ws_dir = self._ws_dir(name)
            try:
                (ws_dir / PLUGINS_DIR).mkdir(parents=True, exist_ok=True)
            except OSError as e:
                raise StoreIoError(f"creating workspace directory {ws_dir}: {e}") from e
            self._persist_workspace(ws)
            self._workspaces[name] = ws
            return ws

    def install_plugin(
        self,
        workspace: str,
        source: str,
        *,
        origin: str = "local",
        pin: str | None = None,
        chosen_tag: str | None = None,
        as_helper: bool = False,
    ) -> InstalledPlugin:
        """Install (or replace) a plugin from source text.

        Reinstalling a name replaces its source and hash; the spec's
        dependency list is the caller's business (the registry client
        drives recursive installs and sets the helper flag).
        """
        spec = parse_plugin_file(source)
        with self._lock:
            ws = self.get_workspace(workspace)
            src_file = self._ws_dir(workspace) / PLUGINS_DIR / f"{spec.name}{PLUGIN_FILE_EXT}"
            _atomic_write(src_file, source.encode("utf-8"))
            record = InstalledPlugin(
                spec=spec,
                origin=origin,
                pin=pin,
                content_hash=content_hash(source),
                helper=as_helper,
                chosen_tag=chosen_tag,
                installed_at=utc_now(),
            )
            previous = ws.plugins.get(spec.name)
            if previous is not None:
                # replacement keeps the original position in install order
                record.installed_at = previous.installed_at
            ws.plugins[spec.name] = record
            self._persist_workspace(ws)
            return record

    def list_plugins(self, workspace: str) -> list[InstalledPlugin]:
        return self.get_workspace(workspace).ordered_plugins()

    def get_plugin(self, workspace: str, name: str) -> InstalledPlugin:
        ws = self.get_workspace(workspace)
        plugin = ws.plugins.get(name)
        if plugin is None:
            raise NoSuchPlugin(f"no plugin {name!r} installed in {workspace!r}")
        return plugin

    def plugin_source_path(self, workspace: str, name: str) -> Path:
        self.get_plugin(workspace, name)
        return self._ws_dir(workspace) / PLUGINS_DIR / f"{name}{PLUGIN_FILE_EXT}"

    def remove_plugin(self, workspace: str, name: str) -> None:
        with self._lock:
            ws = self.get_workspace(workspace)
            if name not in ws.plugins:
                raise NoSuchPlugin(f"no plugin {name!r} installed in {workspace!r}")
            del ws.plugins[name]
            self._persist_workspace(ws)
            src_file = self._ws_dir(workspace) / PLUGINS_DIR / f"{name}{PLUGIN_FILE_EXT}"
            try:
                src_file.unlink()
            except FileNotFoundError:
                pass
            except OSError as e:
                raise StoreIoError(f"removing {src_file}: {e}") from e


def open_store(root: str | os.PathLike) -> Store:
    """Open (creating if needed) the store rooted at `root`."""
    path = Path(root)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise StoreIoError(f"creating store root {path}: {e}") from e
    store = Store(path)
    store._load()
    return store
