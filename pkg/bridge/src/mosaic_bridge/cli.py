"""Command-line entry point for the sidecar server."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from .models import MODEL_NAMES, make_model
from .server import BridgeApp, make_server

__all__ = ["build_parser", "app_from_args", "main"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mosaic-bridge",
        description="Serve a denoiser model behind the bridge wire protocol.",
    )
    parser.add_argument("--model", default="echo", choices=MODEL_NAMES)
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8787)
    parser.add_argument(
        "--fixed-canvas", nargs=2, type=int, metavar=("HEIGHT", "WIDTH"),
        default=None,
        help="report a fixed canvas and resample incoming images to it",
    )
    parser.add_argument(
        "--no-segmenter", action="store_true",
        help="serve 501 on /segment instead of box-fill masks",
    )
    parser.add_argument(
        "--auth-token-env", default=None, metavar="ENV_VAR",
        help="require 'Authorization: Bearer' matching this environment variable",
    )
    return parser


def app_from_args(args) -> BridgeApp:
    token = None
    if args.auth_token_env:
        token = os.environ.get(args.auth_token_env)
        if token is None:
            # fail closed: a misspelled variable must not start an open server
            raise SystemExit(
                f"error: --auth-token-env names {args.auth_token_env!r} "
                "but that environment variable is not set"
            )
    return BridgeApp(
        make_model(args.model),
        segmenter=None if args.no_segmenter else "box",
        fixed_canvas=tuple(args.fixed_canvas) if args.fixed_canvas else None,
        auth_token=token,
    )


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(name)s: %(message)s")
    app = app_from_args(args)
    server = make_server(app, args.host, args.port)
    print(f"serving {args.model} on http://{args.host}:{server.server_port}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


if __name__ == "__main__":
    sys.exit(main())
