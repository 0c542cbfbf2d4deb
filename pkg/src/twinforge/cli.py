"""Command-line entrypoint: serve, bench, and the ctl HTTP client.

The ctl command tree is generated from the same route table the HTTP app is
checked against, so every endpoint stays reachable from the shell. serve
boots a platform from a JSON config (environment interpolation included)
and runs the API on one port; bench drives the scenario harness and writes
a JSON report.
"""

from __future__ import annotations

import json
import os
import re
import sys
import tempfile
from pathlib import Path
from urllib.parse import quote

import click
import httpx

from . import bench as bench_mod
from .config import apply_config, load_config
from .errors import ConfigError, TwinforgeError
from .http_api import CTL_COMMANDS, CtlCommand, build_app
from .platform import Platform

DEFAULT_LISTEN = "127.0.0.1:8080"
DEFAULT_DATA_DIR = "./twinforge-data"


def _split_listen(listen: str) -> tuple[str, int]:
    host, sep, port = listen.rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigError(f"listen must be host:port, got {listen!r}")
    return host or "127.0.0.1", int(port)


def boot_platform(
    config_path: str | None, data_dir: str | None, listen: str | None
) -> tuple[Platform, str, int, dict]:
    """Build and start a platform; precedence: flag > env > config > default."""
    config: dict = {}
    text = ""
    name = "config"
    if config_path:
        config, text = load_config(config_path)
        name = Path(config_path).name
    data_dir = (
        data_dir
        or os.environ.get("TWINFORGE_DATA_DIR")
        or config.get("data_dir")
        or DEFAULT_DATA_DIR
    )
    listen = listen or config.get("listen") or DEFAULT_LISTEN
    host, port = _split_listen(listen)

    platform = Platform(data_dir)
    try:
        counts = apply_config(platform, config, text, name=name)
        platform.start()
        tcp = config.get("gateway_tcp")
        if tcp:
            tcp_host, tcp_port = _split_listen(str(tcp))
            platform.start_tcp(tcp_host, tcp_port)
    except Exception:
        platform.close()
        raise
    return platform, host, port, counts


@click.group()
def main():
    """Digital-twin platform: registry, gateway, bus, sinks, bridges."""


@main.command()
@click.option("--config", "config_path", type=click.Path(), help="platform config JSON")
@click.option("--data-dir", help="state directory (or TWINFORGE_DATA_DIR)")
@click.option("--listen", help="host:port for the HTTP API")
def serve(config_path: str | None, data_dir: str | None, listen: str | None):
    """Start every service and the HTTP API in one process."""
    import uvicorn

    try:
        platform, host, port, counts = boot_platform(config_path, data_dir, listen)
    except TwinforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    applied = ", ".join(f"{k}={v}" for k, v in sorted(counts.items()) if v)
    click.echo(f"listening on http://{host}:{port}" + (f" ({applied})" if applied else ""))
    try:
        uvicorn.run(build_app(platform), host=host, port=port, log_level="warning")
    finally:
        platform.close()


@main.command(name="bench")
@click.argument("kind", type=click.Choice(["core", "ml", "faults"]))
@click.option("--config", "config_path", type=click.Path(), required=True)
@click.option("--out", "out_path", type=click.Path(), default="report.json", show_default=True)
@click.option("--work-dir", type=click.Path(), help="scratch dir (default: a temp dir)")
def bench_cmd(kind: str, config_path: str, out_path: str, work_dir: str | None):
    """Run a benchmark scenario and write its JSON report."""
    try:
        data = json.loads(Path(config_path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        click.echo(f"error: cannot load scenario {config_path}: {exc}", err=True)
        sys.exit(2)
    scratch = work_dir or tempfile.mkdtemp(prefix="twinforge-bench-")
    try:
        report = bench_mod.run_named_scenario(kind, data, scratch)
    except TwinforgeError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    Path(out_path).write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    click.echo(
        f"{kind}: sent={report['sent']} stored={report['stored']} lost={report['lost']} "
        f"duplicates={report['duplicates']} mean_latency_ms={report['latency_ms']['mean']:.1f} "
        f"-> {out_path}"
    )


# ---------------------------------------------------------------------------
# ctl: generated thin client


@main.group()
@click.option(
    "--server",
    default=lambda: os.environ.get("TWINFORGE_SERVER", f"http://{DEFAULT_LISTEN}"),
    show_default="http://127.0.0.1:8080 or TWINFORGE_SERVER",
    help="base URL of a running twinforge server",
)
@click.pass_context
def ctl(ctx: click.Context, server: str):
    """Call the HTTP API from the shell; one subcommand per endpoint."""
    ctx.obj = {"server": server.rstrip("/")}


def _path_params(path: str) -> list[str]:
    return re.findall(r"\{([^}:]+)(?::[^}]*)?\}", path)


def execute(cmd: CtlCommand, server: str, values: dict) -> httpx.Response:
    url = cmd.path
    for name in _path_params(cmd.path):
        url = url.replace("{" + name + "}", quote(str(values[name]), safe="/:."))
    params = {q: values[q] for q in cmd.query if values.get(q) is not None}
    headers = {}
    if cmd.subject and values.get("subject"):
        headers["x-subject"] = values["subject"]
    auth = (values["username"], values["password"]) if cmd.auth else None
    content = None
    if cmd.body:
        raw = values.get("data")
        if values.get("file"):
            raw = Path(values["file"]).read_text(encoding="utf-8")
        content = (raw if raw is not None else "{}").encode("utf-8")
        headers["Content-Type"] = "application/json"
    return httpx.request(
        cmd.method,
        server + url,
        params=params,
        headers=headers,
        content=content,
        auth=auth,
        timeout=30.0,
    )


def _make_callback(cmd: CtlCommand):
    def callback(**values):
        ctx = click.get_current_context()
        res = execute(cmd, ctx.obj["server"], values)
        content_type = res.headers.get("content-type", "")
        if content_type.startswith("application/json"):
            text = json.dumps(res.json(), indent=2)
        else:
            text = res.text.rstrip("\n")
        if res.status_code >= 400:
            click.echo(text, err=True)
            sys.exit(1)
        click.echo(text)

    return callback


def _attach_ctl_commands() -> None:
    groups: dict[str, click.Group] = {}
    for cmd in CTL_COMMANDS:
        params: list[click.Parameter] = []
        for name in _path_params(cmd.path):
            params.append(click.Argument([name]))
        for q in cmd.query:
            params.append(click.Option([f"--{q}", q]))
        if cmd.body:
            params.append(click.Option(["--data", "data"], help="inline JSON body"))
            params.append(
                click.Option(["--file", "file"], type=click.Path(), help="JSON body from a file")
            )
        if cmd.subject:
            params.append(click.Option(["--subject", "subject"], default="admin"))
        if cmd.auth:
            params.append(click.Option(["--username", "username"], required=True))
            params.append(click.Option(["--password", "password"], required=True))
        command = click.Command(
            cmd.verb or cmd.group,
            params=params,
            callback=_make_callback(cmd),
            help=f"{cmd.method} {cmd.path}",
        )
        if cmd.verb is None:
            ctl.add_command(command)
        else:
            group = groups.get(cmd.group)
            if group is None:
                group = click.Group(cmd.group, help=f"{cmd.group} endpoints")
                groups[cmd.group] = group
                ctl.add_command(group)
            group.add_command(command)


_attach_ctl_commands()


if __name__ == "__main__":
    main()
