"""Command-line entry points.

Exit code contract: 0 success, 1 domain failure (invalid manifest, aborted
or failed run, unknown run id), 2 I/O or parse failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, FedTopoError, NotFoundError
from .manifest import apply_overrides, load_manifest_file, validate_manifest
from .reporting import render_metrics_csv, render_metrics_jsonlines
from .repository import Repository
from .runner import run_from_manifest, serve_collector, serve_localops

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_IO = 2

RUN_TIMEOUT_S = 600.0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedtopo",
        description="Federated-learning topology lab: validate, run, and report experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a manifest file and print its problems")
    p.add_argument("manifest", help="path to a manifest JSON file")

    p = sub.add_parser("run", help="execute one run described by a manifest")
    p.add_argument("manifest", help="path to a manifest JSON file")
    p.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="dotted-path manifest override, may repeat",
    )
    p.add_argument("--transport", choices=("inproc", "socket"), help="override transport.kind")
    p.add_argument("--runs-root", default=".", help="repository root (default: current directory)")
    p.add_argument("--server", help="submit to a control-plane URL instead of executing locally")

    p = sub.add_parser("report", help="print a finished run's metric records")
    p.add_argument("run_id")
    p.add_argument("--format", choices=("csv", "jsonlines"), default="csv")
    p.add_argument("--runs-root", default=".", help="repository root (default: current directory)")

    p = sub.add_parser("serve-collector", help="run one collector process from a config file")
    p.add_argument("config", help="path to a collector config JSON file")

    p = sub.add_parser("serve-localops", help="run one local-operations process from a config file")
    p.add_argument("config", help="path to a local-operations config JSON file")

    p = sub.add_parser("serve-api", help="serve the HTTP control plane")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--runs-root", default=".", help="repository root (default: current directory)")

    return parser


def _fail(message: str) -> None:
    print(f"error: {message}", file=sys.stderr)


def _summary_line(run_id: str, status: str, rounds: int, accuracy: float | None) -> str:
    accuracy_text = "-" if accuracy is None else repr(float(accuracy))
    return f"{run_id} {status} {rounds} {accuracy_text}"


def cmd_validate(args: argparse.Namespace) -> int:
    try:
        raw = load_manifest_file(args.manifest)
    except (OSError, ValueError, ConfigError) as exc:
        _fail(str(exc))
        return EXIT_IO
    errors = validate_manifest(raw)
    for line in errors:
        print(line)
    return EXIT_DOMAIN if errors else EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    try:
        raw = load_manifest_file(args.manifest)
    except (OSError, ValueError, ConfigError) as exc:
        _fail(str(exc))
        return EXIT_IO
    if args.server:
        return _run_remote(args.server, raw, args.overrides, args.transport)
    try:
        raw = apply_overrides(raw, args.overrides)
        summary = run_from_manifest(raw, args.runs_root, transport=args.transport)
    except FedTopoError as exc:
        _fail(str(exc))
        return EXIT_DOMAIN
    print(
        _summary_line(
            summary.run_id, summary.status, summary.rounds_completed, summary.final_accuracy
        )
    )
    return EXIT_OK if summary.status == "done" else EXIT_DOMAIN


def _run_remote(server: str, raw: dict, overrides: list[str], transport: str | None) -> int:
    import httpx

    body: dict = {"manifest": raw, "overrides": list(overrides)}
    if transport:
        body["transport"] = transport
    try:
        response = httpx.post(server.rstrip("/") + "/runs", json=body, timeout=RUN_TIMEOUT_S)
    except httpx.HTTPError as exc:
        _fail(f"control plane unreachable: {exc}")
        return EXIT_IO
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        _fail(f"{response.status_code}: {detail}")
        return EXIT_DOMAIN
    obj = response.json()
    print(
        _summary_line(
            obj["run_id"], obj["status"], obj["rounds_completed"], obj.get("final_accuracy")
        )
    )
    return EXIT_OK if obj["status"] == "done" else EXIT_DOMAIN


def cmd_report(args: argparse.Namespace) -> int:
    repository = Repository(args.runs_root)
    try:
        records = repository.load_metrics(args.run_id)
    except (NotFoundError, ConfigError) as exc:
        _fail(str(exc))
        return EXIT_DOMAIN
    if args.format == "csv":
        sys.stdout.write(render_metrics_csv(records))
    else:
        sys.stdout.write(render_metrics_jsonlines(records))
    return EXIT_OK


def cmd_serve_collector(args: argparse.Namespace) -> int:
    try:
        return serve_collector(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
        return EXIT_IO
    except FedTopoError as exc:
        _fail(str(exc))
        return EXIT_DOMAIN


def cmd_serve_localops(args: argparse.Namespace) -> int:
    try:
        return serve_localops(args.config)
    except (OSError, json.JSONDecodeError) as exc:
        _fail(str(exc))
        return EXIT_IO
    except FedTopoError as exc:
        _fail(str(exc))
        return EXIT_DOMAIN


def cmd_serve_api(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(args.runs_root), host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


COMMANDS = {
    "validate": cmd_validate,
    "run": cmd_run,
    "report": cmd_report,
    "serve-collector": cmd_serve_collector,
    "serve-localops": cmd_serve_localops,
    "serve-api": cmd_serve_api,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
