"""Shareable app URLs, plugin references, repo indexes, link installs.

Reference grammar: ``owner/repo:PluginName[@pin]`` or a direct URL ending
in the plugin file extension. App URLs carry their parameters in the
fragment: ``<base>/#/app?w=<workspace>&plugin=<ref>&tag=<t>&start=<name>``
plus ``fullscreen`` and ``engine``; unknown parameters are ignored.

Repo indexes are fetched from ``manifest.imjoy.json`` at the repo root of
the pinned (or default) ref. Raw content resolves through a configurable
URL template ``<base>/<owner>/<repo>/<ref>/<uri>``, which a local
directory fetcher mirrors for hermetic tests.
"""

from __future__ import annotations

import json
import re
import urllib.error
import urllib.parse
import urllib.request
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import (
    BadRef,
    DependencyCycle,
    FetchError,
    InstallStepError,
    InvariantViolation,
    MalformedIndex,
    MissingPluginParam,
    NotAnAppUrl,
    PluginNotInIndex,
)
from .naming import check_name, is_valid_name
from .pluginfile import PLUGIN_FILE_EXT, parse_plugin_file, validate_spec
from .store import InstalledPlugin, Store

DEFAULT_CONTENT_BASE = "https://raw.githubusercontent.com"
DEFAULT_REF = "master"
DEFAULT_WORKSPACE = "default"
INDEX_FILENAME = "manifest.imjoy.json"

_REPO_PART = r"[A-Za-z0-9_.\-]+"
_REPO_REF_RE = re.compile(
    rf"^(?P<owner>{_REPO_PART})/(?P<repo>{_REPO_PART}):(?P<name>[^@]+)(?:@(?P<pin>{_REPO_PART}))?$"
)


@dataclass(frozen=True)
class PluginRef:
    """Where a plugin comes from: a repo entry or a direct URL."""

    form: str  # "repo" | "direct_url"
    owner: str | None = None
    repo: str | None = None
    plugin_name: str | None = None
    pin: str | None = None
    url: str | None = None

    def canonical(self) -> str:
        if self.form == "direct_url":
            return self.url or ""
        base = f"{self.owner}/{self.repo}:{self.plugin_name}"
        return f"{base}@{self.pin}" if self.pin else base


def parse_plugin_ref(text: str) -> PluginRef:
    if text.startswith(("http://", "https://")):
        if not text.endswith(PLUGIN_FILE_EXT):
            raise BadRef(f"direct plugin URL must end with {PLUGIN_FILE_EXT}: {text!r}")
        return PluginRef(form="direct_url", url=text)
    m = _REPO_REF_RE.match(text)
    if m is None:
        raise BadRef(f"{text!r} is not owner/repo:PluginName[@pin] or a plugin URL")
    name = m.group("name")
    if not is_valid_name(name):
        raise BadRef(f"plugin name {name!r} in reference {text!r} is not a legal name")
    return PluginRef(
        form="repo",
        owner=m.group("owner"),
        repo=m.group("repo"),
        plugin_name=name,
        pin=m.group("pin"),
    )


def format_plugin_ref(ref: PluginRef) -> str:
    return ref.canonical()


@dataclass(frozen=True)
class InstallDirective:
    """Everything an app URL says about installing and starting a plugin."""

    workspace: str
    ref: PluginRef
    tag: str | None = None
    start: str | None = None
    fullscreen: bool = False
    engine_url: str | None = None


def parse_app_url(url: str) -> InstallDirective:
    """Parse an app URL's fragment query into an install directive."""
    split = urllib.parse.urlsplit(url)
    fragment = split.fragment
    if not fragment.startswith("/app"):
        raise NotAnAppUrl(f"{url!r} has no #/app fragment")
    rest = fragment[len("/app") :]
    if rest.startswith("?"):
        rest = rest[1:]
    elif rest:
        raise NotAnAppUrl(f"{url!r} has no #/app fragment")
    params = urllib.parse.parse_qs(rest, keep_blank_values=True)

    plugin_values = params.get("plugin")
    if not plugin_values or not plugin_values[0]:
        raise MissingPluginParam("app URL carries no plugin parameter")
    ref = parse_plugin_ref(plugin_values[0])

    workspace = params.get("w", [DEFAULT_WORKSPACE])[0] or DEFAULT_WORKSPACE
    if not is_valid_name(workspace):
        raise BadRef(f"workspace {workspace!r} is not a legal name")

    start = params.get("start", [None])[0] or None
    if start is not None and not is_valid_name(start):
        raise BadRef(f"start plugin {start!r} is not a legal name")

    tag = params.get("tag", [None])[0] or None
    fullscreen = params.get("fullscreen", ["0"])[0].lower() in ("1", "true", "yes")
    engine_url = params.get("engine", [None])[0] or None

    return InstallDirective(
        workspace=workspace,
        ref=ref,
        tag=tag,
        start=start,
        fullscreen=fullscreen,
        engine_url=engine_url,
    )


def format_app_url(directive: InstallDirective, base: str = "https://hub.local") -> str:
    """Render a directive back into an app URL (normalized form)."""
    params = [("w", directive.workspace), ("plugin", directive.ref.canonical())]
    if directive.tag:
        params.append(("tag", directive.tag))
    if directive.start:
        params.append(("start", directive.start))
    if directive.fullscreen:
        params.append(("fullscreen", "1"))
    if directive.engine_url:
        params.append(("engine", directive.engine_url))
    query = urllib.parse.urlencode(params)
    return f"{base}/#/app?{query}"


# ---------------------------------------------------------------------------
# fetching


class Fetcher:
    """Transport used to retrieve plugin sources and repo indexes."""

    def fetch(self, url: str) -> bytes:
        raise NotImplementedError


class HttpFetcher(Fetcher):
    def __init__(self, timeout: float = 30.0):
        self.timeout = timeout

    def fetch(self, url: str) -> bytes:
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as response:
                return response.read()
        except (urllib.error.URLError, OSError) as e:
            raise FetchError(f"GET {url}: {e}") from e


class LocalDirFetcher(Fetcher):
    """Serves any URL from a directory tree mirroring the URL's path.

    ``<anything>://<host>/<owner>/<repo>/<ref>/<uri>`` maps to
    ``<root>/<owner>/<repo>/<ref>/<uri>``, so one fixture tree covers both
    repo-resolved and direct URLs.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def fetch(self, url: str) -> bytes:
        path = urllib.parse.urlsplit(url).path.lstrip("/")
        decoded = urllib.parse.unquote(path)
        target = (self.root / decoded).resolve()
        if not str(target).startswith(str(self.root.resolve())):
            raise FetchError(f"{url!r} escapes the fixture root")
        try:
            return target.read_bytes()
        except OSError as e:
            raise FetchError(f"read {target}: {e}") from e


# ---------------------------------------------------------------------------
# repo indexes


@dataclass(frozen=True)
class IndexEntry:
    plugin_name: str
    uri: str
    version: str | None = None


@dataclass(frozen=True)
class RepoIndex:
    repo_id: str  # "owner/repo"
    uri_root: str | None
    entries: tuple[IndexEntry, ...]

    def find(self, plugin_name: str) -> IndexEntry | None:
        for entry in self.entries:
            if entry.plugin_name == plugin_name:
                return entry
        return None


def fetch_repo_index(
    owner: str,
    repo: str,
    fetcher: Fetcher,
    *,
    ref: str = DEFAULT_REF,
    content_base: str = DEFAULT_CONTENT_BASE,
) -> RepoIndex:
    url = f"{content_base}/{owner}/{repo}/{ref}/{INDEX_FILENAME}"
    raw = fetcher.fetch(url)
    try:
        data = json.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise MalformedIndex(f"{url}: {e}") from e
    if not isinstance(data, dict) or not isinstance(data.get("plugins"), list):
        raise MalformedIndex(f"{url}: index must be an object with a plugins list")
    uri_root = data.get("uri_root")
    if uri_root is not None and not isinstance(uri_root, str):
        raise MalformedIndex(f"{url}: uri_root must be a string")
    entries: list[IndexEntry] = []
    seen: set[str] = set()
    for item in data["plugins"]:
        if (
            not isinstance(item, dict)
            or not isinstance(item.get("name"), str)
            or not isinstance(item.get("uri"), str)
        ):
            raise MalformedIndex(f"{url}: plugin entries need a name and a uri")
        if item["name"] in seen:
            raise MalformedIndex(f"{url}: duplicate plugin name {item['name']!r}")
        seen.add(item["name"])
        entries.append(IndexEntry(item["name"], item["uri"], item.get("version")))
    return RepoIndex(repo_id=f"{owner}/{repo}", uri_root=uri_root, entries=tuple(entries))


@dataclass(frozen=True)
class FetchPlan:
    url: str
    expected_pin: str | None = None


def resolve_ref(
    ref: PluginRef,
    index: RepoIndex | None = None,
    *,
    content_base: str = DEFAULT_CONTENT_BASE,
    default_ref: str = DEFAULT_REF,
) -> FetchPlan:
    """Turn a reference into a concrete fetch URL (pin-exact when pinned)."""
    if ref.form == "direct_url":
        return FetchPlan(url=ref.url or "", expected_pin=None)
    if index is None:
        raise PluginNotInIndex("repo references need a fetched index to resolve")
    entry = index.find(ref.plugin_name or "")
    if entry is None:
        raise PluginNotInIndex(f"{ref.plugin_name!r} is not in the index of {index.repo_id}")
    rev = ref.pin or default_ref
    uri = f"{index.uri_root.rstrip('/')}/{entry.uri}" if index.uri_root else entry.uri
    return FetchPlan(
        url=f"{content_base}/{ref.owner}/{ref.repo}/{rev}/{uri}", expected_pin=ref.pin
    )


# ---------------------------------------------------------------------------
# link installs


@dataclass
class InstallEvent:
    step: str
    detail: str
    fraction: float


@dataclass
class InstallReport:
    workspace: str
    entries: list[InstalledPlugin] = field(default_factory=list)
    started: str | None = None
    fullscreen: bool = False
    events: list[InstallEvent] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "workspace": self.workspace,
            "plugins": [
                {
                    "name": p.name,
                    "content_hash": p.content_hash,
                    "helper": p.helper,
                    "origin": p.origin,
                    "pin": p.pin,
                    "chosen_tag": p.chosen_tag,
                }
                for p in self.entries
            ],
            "started": self.started,
            "fullscreen": self.fullscreen,
            "events": [
                {"step": e.step, "detail": e.detail, "fraction": e.fraction}
                for e in self.events
            ],
        }


class Installer:
    """Drives link installs: resolve, fetch, install, recurse, start."""

    def __init__(
        self,
        store: Store,
        fetcher: Fetcher,
        *,
        content_base: str = DEFAULT_CONTENT_BASE,
        default_ref: str = DEFAULT_REF,
        on_event: Callable[[InstallEvent], None] | None = None,
    ):
        self.store = store
        self.fetcher = fetcher
        self.content_base = content_base
        self.default_ref = default_ref
        self.on_event = on_event
        self._index_cache: dict[tuple[str, str, str], RepoIndex] = {}

    def _emit(self, report: InstallReport, step: str, detail: str, fraction: float) -> None:
        event = InstallEvent(step, detail, min(1.0, max(0.0, fraction)))
        report.events.append(event)
        if self.on_event is not None:
            self.on_event(event)

    def _index_for(self, ref: PluginRef) -> RepoIndex:
        key = (ref.owner or "", ref.repo or "", ref.pin or self.default_ref)
        if key not in self._index_cache:
            self._index_cache[key] = fetch_repo_index(
                key[0],
                key[1],
                self.fetcher,
                ref=key[2],
                content_base=self.content_base,
            )
        return self._index_cache[key]

    def _fetch_source(self, ref: PluginRef) -> str:
        index = self._index_for(ref) if ref.form == "repo" else None
        plan = resolve_ref(
            ref, index, content_base=self.content_base, default_ref=self.default_ref
        )
        raw = self.fetcher.fetch(plan.url)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise FetchError(f"{plan.url}: plugin source is not UTF-8: {e}") from e

    def _install_one(
        self,
        report: InstallReport,
        workspace: str,
        ref: PluginRef,
        *,
        tag: str | None,
        as_helper: bool,
        stack: list[str],
        visited: set[str],
    ) -> None:
        key = ref.canonical()
        if key in stack:
            chain = " -> ".join(stack + [key])
            raise DependencyCycle(f"dependency cycle: {chain}")
        if key in visited:
            return
        stack.append(key)
        try:
            try:
                source = self._fetch_source(ref)
            except Exception as e:
                raise InstallStepError("fetch", e) from e
            self._emit(report, "fetch", key, 0.3 + 0.4 * min(1.0, len(visited) / 4))

            try:
                spec = parse_plugin_file(source)
                violations = validate_spec(spec)
                if violations:
                    raise InvariantViolation("; ".join(str(v) for v in violations))
            except Exception as e:
                raise InstallStepError("validate", e) from e

            existing = None
            if self.store.has_workspace(workspace):
                existing = self.store.get_workspace(workspace).plugins.get(spec.name)
            helper = as_helper and (existing is None or existing.helper)
            try:
                record = self.store.install_plugin(
                    workspace,
                    source,
                    origin=key,
                    pin=ref.pin if ref.form == "repo" else None,
                    chosen_tag=tag,
                    as_helper=helper,
                )
            except Exception as e:
                raise InstallStepError("install", e) from e
            report.entries.append(record)
            visited.add(key)
            self._emit(report, "install", spec.name, 0.4 + 0.4 * min(1.0, len(visited) / 4))

            for dep_text in spec.dependencies:
                try:
                    dep_ref = parse_plugin_ref(dep_text)
                except Exception as e:
                    raise InstallStepError("dependency", e) from e
                self._install_one(
                    report,
                    workspace,
                    dep_ref,
                    tag=None,
                    as_helper=True,
                    stack=stack,
                    visited=visited,
                )
        finally:
            stack.pop()

    def install_from_url(self, url: str) -> InstallReport:
        """End-to-end link install; raises InstallStepError with the failing
        step's name wrapped around the cause."""
        try:
            directive = parse_app_url(url)
        except NotAnAppUrl:
            raise
        except Exception as e:
            raise InstallStepError("parse-url", e) from e

        report = InstallReport(workspace=directive.workspace, fullscreen=directive.fullscreen)
        self._emit(report, "parse-url", directive.ref.canonical(), 0.05)

        try:
            self.store.create_workspace(directive.workspace)
        except Exception as e:
            raise InstallStepError("workspace", e) from e
        self._emit(report, "workspace", directive.workspace, 0.15)

        self._install_one(
            report,
            directive.workspace,
            directive.ref,
            tag=directive.tag,
            as_helper=False,
            stack=[],
            visited=set(),
        )

        if directive.start is not None:
            check_name(directive.start, "start plugin")
            report.started = directive.start
            self._emit(report, "start", directive.start, 0.95)

        self._emit(report, "done", directive.workspace, 1.0)
        return report


def install_from_url(
    store: Store,
    url: str,
    fetcher: Fetcher,
    *,
    content_base: str = DEFAULT_CONTENT_BASE,
    default_ref: str = DEFAULT_REF,
    on_event: Callable[[InstallEvent], None] | None = None,
) -> InstallReport:
    installer = Installer(
        store, fetcher, content_base=content_base, default_ref=default_ref, on_event=on_event
    )
    return installer.install_from_url(url)
