"""Thin command-line client for the run service.

By default the service runs in-process (no socket); --server points the
same client at a remote instance, in which case output files are
written on the server's filesystem.  Exit codes: 0 success, 1
validation failure (a residual over threshold, a solve that did not
converge, transport errors), 2 config error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import DEFAULT_CONFIG, ConfigError, parse_config

_COMMANDS = ("validate-kernel", "sinkhorn", "simulate", "sweep", "report")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kylebridge",
        description="entropic bridge equilibria: batch runner")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None,
                       help="run configuration file (defaults used if omitted)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None,
                       help="override sim.seed")
        p.add_argument("--threads", type=int, default=None,
                       help="cap the BLAS thread pool (never changes results)")
        p.add_argument("--server", default=None,
                       help="service URL; default executes in-process")
        p.add_argument("--print-default-config", action="store_true",
                       help="print the config schema with defaults and exit")
    return parser


def _client(server: str | None):
    if server is not None:
        import httpx
        return httpx.Client(base_url=server, timeout=None)
    # in-process: same wire format, no socket
    import warnings
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message=".*httpx.*")
        from starlette.testclient import TestClient
    from .service.app import create_app
    return TestClient(create_app())


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.print_default_config:
        print(DEFAULT_CONFIG, end="")
        return 0

    if args.config is not None:
        try:
            config_text = Path(args.config).read_text(encoding="utf-8")
        except OSError as exc:
            print(f"config error: cannot read {args.config}: {exc}",
                  file=sys.stderr)
            return 2
    else:
        config_text = DEFAULT_CONFIG
    # fail fast with local diagnostics before any transport
    try:
        parse_config(config_text, name=str(args.config or "<defaults>"))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    body = {"config": config_text, "out_dir": args.out}
    if args.seed is not None:
        body["seed"] = args.seed
    if args.threads is not None:
        body["threads"] = args.threads

    try:
        with _client(args.server) as client:
            resp = client.post(f"/run/{args.command}", json=body)
    except Exception as exc:     # transport-level failure
        print(f"error: {exc}", file=sys.stderr)
        return 1

    if resp.status_code == 422:
        detail = resp.json().get("detail", resp.text)
        print(f"config error: {detail}", file=sys.stderr)
        return 2
    if resp.status_code != 200:
        print(f"error: HTTP {resp.status_code}: {resp.text}", file=sys.stderr)
        return 1

    payload = resp.json()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary_path = out / f"summary_{args.command}.json"
    with open(summary_path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    for w in payload.get("warnings", []):
        print(f"warning: {w}", file=sys.stderr)
    print(json.dumps(payload["summary"], indent=2, sort_keys=True))
    files = payload.get("files", [])
    if files:
        where = "" if args.server is None else f" on {args.server}"
        print(f"files{where}: {', '.join(files)}", file=sys.stderr)
    return 0 if payload.get("passed") else 1


if __name__ == "__main__":
    raise SystemExit(main())
