"""Operator command line: serve, install, run, ls, check, shim.

Exit codes: 0 success, 1 usage error, 2 validation failure, 3 network or
IO failure, 4 plugin runtime error. `--json` switches machine-readable
output on commands that report structures. The HUB_TOKEN environment
variable overrides any --token flag.
"""

from __future__ import annotations

import asyncio
import json
import os
import signal
import sys
from pathlib import Path

import click

from . import errors as E
from .engine.hub import DEFAULT_PORT, Hub, HubConfig
from .engine.shim import run_shim
from .pluginfile import parse_plugin_file, validate_spec
from .registry import HttpFetcher, Installer, LocalDirFetcher
from .rpc.session import open_tcp_session
from .rpc.values import value_to_header
from .script import parse_script
from .store import open_store

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_VALIDATION = 2
EXIT_NETWORK = 3
EXIT_RUNTIME = 4

DEFAULT_DATA_DIR = "~/.pluginhub"


def _classify(error: BaseException) -> int:
    """Map a typed failure to the documented exit code."""
    if isinstance(error, E.InstallStepError):
        return _classify(error.inner)
    if isinstance(error, E.NotAnAppUrl):
        return EXIT_USAGE
    if isinstance(
        error,
        (
            E.PluginFormatError,
            E.BadRef,
            E.MissingPluginParam,
            E.MalformedIndex,
            E.ScriptSyntaxError,
            E.DuplicateFunction,
            E.MalformedDef,
            E.NotAWorkflowUrl,
            E.CorruptStore,
        ),
    ):
        return EXIT_VALIDATION
    if isinstance(
        error,
        (
            E.FetchError,
            E.ConnectFailed,
            E.StoreIoError,
            E.HandshakeTimeout,
            E.AuthFailed,
            ConnectionError,
            OSError,
        ),
    ):
        return EXIT_NETWORK
    if isinstance(error, E.HubError):
        return EXIT_RUNTIME
    return EXIT_RUNTIME


def _resolve_token(token: str | None) -> str | None:
    return os.environ.get("HUB_TOKEN") or token


def wire_text(value: object) -> str:
    """Render a result value in the wire header notation (canonical JSON).

    Binary array payloads cannot inline into JSON; they are appended as
    base64 next to the tagged value.
    """
    atts: list[bytes] = []
    header = value_to_header(value, atts)
    if atts:
        import base64

        return json.dumps(
            {
                "value": header,
                "attachments_b64": [base64.b64encode(a).decode("ascii") for a in atts],
            },
            sort_keys=True,
            separators=(",", ":"),
        )
    return json.dumps(header, sort_keys=True, separators=(",", ":"))


@click.group(name="hub")
def cli() -> None:
    """Plugin hub: workspaces, transparent RPC, supervised native plugins."""


@cli.command()
@click.option("--listen", default=f"127.0.0.1:{DEFAULT_PORT}", show_default=True)
@click.option("--ws-port", type=int, default=None, help="Also listen for websocket sessions.")
@click.option("--token", default=None, help="Require this token from connecting sessions.")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--engine-mode", is_flag=True, help="Expose the engine interface to a controlling hub.")
@click.option(
    "--ui",
    "ui_dir",
    is_flag=False,
    flag_value="auto",
    default=None,
    help="Serve the workbench from this directory on the websocket port.",
)
@click.option("--fixture", default=None, help="Resolve plugin fetches from a local directory tree.")
@click.option("--config", "config_file", default=None, help="JSON config file with extra settings.")
def serve(listen, ws_port, token, data_dir, engine_mode, ui_dir, fixture, config_file):
    """Run the hub until interrupted."""
    host, _, port = listen.rpartition(":")
    extra: dict = {}
    if config_file:
        extra = json.loads(Path(config_file).read_text("utf-8"))
    resolved_ui = _resolve_ui_dir(ui_dir)
    config = HubConfig(
        data_root=Path(data_dir).expanduser(),
        host=host or "127.0.0.1",
        port=int(port),
        ws_port=ws_port if ws_port is not None else extra.get("ws_port"),
        token=_resolve_token(token if token is not None else extra.get("token")),
        engine_mode=engine_mode or bool(extra.get("engine_mode")),
        ui_dir=resolved_ui,
        fixture_dir=Path(fixture) if fixture else None,
        call_timeout=float(extra.get("call_timeout", 300.0)),
        handshake_timeout=float(extra.get("handshake_timeout", 10.0)),
        ready_timeout=float(extra.get("ready_timeout", 30.0)),
        kill_grace=float(extra.get("kill_grace", 5.0)),
        restart_limit=int(extra.get("restart_limit", 0)),
        provider_commands=extra.get("provider_commands", {}),
    )
    asyncio.run(_serve(config))


def _resolve_ui_dir(ui_dir: str | None) -> Path | None:
    if ui_dir is None:
        return None
    if ui_dir != "auto":
        return Path(ui_dir)
    env = os.environ.get("HUB_UI_DIR")
    if env:
        return Path(env)
    candidate = Path.cwd() / "frontend" / "dist"
    return candidate if candidate.is_dir() else None


async def _serve(config: HubConfig) -> None:
    hub = Hub(config)
    await hub.start()
    mode = "engine" if config.engine_mode else "hub"
    click.echo(f"{mode} listening on tcp://{hub.tcp_addr}", err=True)
    if hub.ws_port is not None:
        click.echo(f"{mode} listening on ws://{config.host}:{hub.ws_port}/ws", err=True)
        if config.ui_dir is not None:
            click.echo(f"workbench at http://{config.host}:{hub.ws_port}/", err=True)
    stop = asyncio.Event()
    loop = asyncio.get_running_loop()
    for sig in (signal.SIGINT, signal.SIGTERM):
        try:
            loop.add_signal_handler(sig, stop.set)
        except NotImplementedError:  # pragma: no cover - non-unix
            pass
    try:
        await stop.wait()
    finally:
        await hub.aclose()


@cli.command()
@click.argument("url")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--fixture", default=None, help="Resolve fetches from a local directory tree.")
@click.option("--json", "as_json", is_flag=True)
def install(url, data_dir, fixture, as_json):
    """Install a plugin (and its dependencies) from an app URL."""
    store = open_store(Path(data_dir).expanduser())
    fetcher = LocalDirFetcher(fixture) if fixture else HttpFetcher()

    def on_event(event):
        if not as_json:
            click.echo(f"[{event.fraction:4.0%}] {event.step}: {event.detail}")

    installer = Installer(store, fetcher, on_event=on_event)
    report = installer.install_from_url(url)
    if report.started is not None:
        started_note = _try_start(store, data_dir, fixture, report)
        if started_note and not as_json:
            click.echo(started_note)
    if as_json:
        click.echo(json.dumps(report.to_dict(), sort_keys=True))
    else:
        for entry in report.entries:
            marker = " (helper)" if entry.helper else ""
            click.echo(f"installed {entry.name}{marker} sha256={entry.content_hash}")


def _try_start(store, data_dir, fixture, report) -> str:
    """Run the start plugin's start behavior on an embedded hub."""

    async def _run() -> str:
        config = HubConfig(
            data_root=Path(data_dir).expanduser(),
            port=0,
            fixture_dir=Path(fixture) if fixture else None,
        )
        hub = Hub(config)
        await hub.start()
        try:
            await hub.run_plugin(report.workspace, report.started)
            return f"started {report.started}"
        except E.HubError as e:
            return f"start of {report.started} deferred: {e}"
        finally:
            await hub.aclose()

    return asyncio.run(_run())


@cli.command()
@click.option("-w", "--workspace", required=True)
@click.option("-p", "--plugin", required=True)
@click.option("-m", "--method", required=True)
@click.option("--args", "args_text", default="[]", show_default=True)
@click.option("--connect", default=None, help="Hub address host:port.")
@click.option("--embedded", is_flag=True, help="Run an in-process hub over the local store.")
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--token", default=None)
def run(workspace, plugin, method, args_text, connect, embedded, data_dir, token):
    """Call a plugin method and print the result."""
    try:
        call_args = json.loads(args_text)
    except json.JSONDecodeError as e:
        raise click.UsageError(f"--args must be a JSON array: {e}")
    if not isinstance(call_args, list):
        raise click.UsageError("--args must be a JSON array")
    token = _resolve_token(token)
    result = asyncio.run(
        _run_call(workspace, plugin, method, call_args, connect, embedded, data_dir, token)
    )
    click.echo(wire_text(result))


async def _run_call(workspace, plugin, method, call_args, connect, embedded, data_dir, token):
    if embedded:
        config = HubConfig(data_root=Path(data_dir).expanduser(), port=0, token=token)
        hub = Hub(config)
        await hub.start()
        try:
            return await hub.call(workspace, plugin, method, call_args)
        finally:
            await hub.aclose()
    addr = connect or f"127.0.0.1:{DEFAULT_PORT}"
    host, _, port = addr.rpartition(":")
    try:
        session = await open_tcp_session(
            host or "127.0.0.1", int(port), role="client", token=token
        )
    except (ConnectionError, OSError, ValueError) as e:
        raise E.ConnectFailed(f"connecting to {addr}: {e}") from e
    try:
        return await session.call_remote(plugin, method, call_args, workspace=workspace)
    finally:
        await session.close()


@cli.command()
@click.option("-w", "--workspace", default=None)
@click.option("--data-dir", default=DEFAULT_DATA_DIR, show_default=True)
@click.option("--json", "as_json", is_flag=True)
def ls(workspace, data_dir, as_json):
    """List workspaces and installed plugins."""
    store = open_store(Path(data_dir).expanduser())
    names = [workspace] if workspace else store.list_workspaces()
    listing = []
    for name in names:
        plugins = store.list_plugins(name)
        listing.append(
            {
                "workspace": name,
                "plugins": [
                    {
                        "name": p.name,
                        "kind": p.spec.runtime_kind,
                        "version": p.spec.version,
                        "helper": p.helper,
                        "pin": p.pin,
                        "origin": p.origin,
                        "content_hash": p.content_hash,
                    }
                    for p in plugins
                ],
            }
        )
    if as_json:
        click.echo(json.dumps({"workspaces": listing}, sort_keys=True))
        return
    if not listing:
        click.echo("no workspaces")
    for entry in listing:
        click.echo(f"{entry['workspace']}/")
        for p in entry["plugins"]:
            marker = " (helper)" if p["helper"] else ""
            click.echo(f"  {p['name']}{marker}  {p['kind']}  {p['version']}")


@cli.command()
@click.argument("file", type=click.Path(exists=True, dir_okay=False))
def check(file):
    """Validate a plugin file; exit 0 only when it is sound."""
    source = Path(file).read_text("utf-8")
    spec = parse_plugin_file(source)
    violations = validate_spec(spec)
    for v in violations:
        click.echo(str(v))
    if spec.runtime_kind in ("worker", "native") and "script" in spec.code_sections:
        parse_script(spec.code_sections["script"])
    if violations:
        sys.exit(EXIT_VALIDATION)
    click.echo(f"{spec.name} {spec.version} ({spec.runtime_kind}): ok")


@cli.command(hidden=True)
@click.option("--spec", "spec_path", required=True)
@click.option("--connect", required=True)
@click.option("--token", default=None)
@click.option("--launch-id", default=None)
def shim(spec_path, connect, token, launch_id):
    """Internal: host one plugin as a child process of the hub."""
    asyncio.run(run_shim(spec_path, connect, _resolve_token(token), launch_id))


def main(argv: list[str] | None = None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Exit as e:
        return int(e.exit_code)
    except click.UsageError as e:
        click.echo(f"usage error: {e.format_message()}", err=True)
        if e.ctx is not None:
            click.echo(e.ctx.get_usage(), err=True)
        return EXIT_USAGE
    except click.Abort:
        return 130
    except SystemExit as e:
        return int(e.code or 0)
    except E.HubError as e:
        click.echo(f"error: {e.code}: {e}", err=True)
        code = _classify(e)
        if code == EXIT_USAGE:
            click.echo(
                "hint: app links look like "
                "https://<host>/#/app?w=<workspace>&plugin=<owner>/<repo>:<Plugin>",
                err=True,
            )
        return code
    except (ConnectionError, OSError) as e:
        click.echo(f"error: {e}", err=True)
        return EXIT_NETWORK


if __name__ == "__main__":
    sys.exit(main())
