"""Console entry point: load prototypes, serve the protocol."""

from __future__ import annotations

import argparse
import sys

import uvicorn

from oracle_server.app import create_app
from oracle_server.models import PrototypeModel


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oracle-server",
        description="Serve a nearest-prototype hard-label classifier over HTTP",
    )
    parser.add_argument(
        "--prototypes", nargs="+", required=True, metavar="TENSOR",
        help="TEA1 tensor files, one per class; class index = argument position",
    )
    parser.add_argument("--host", default="127.0.0.1")
    parser.add_argument("--port", type=int, default=8000)
    parser.add_argument("--log-level", default="info")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        model = PrototypeModel.from_files(args.prototypes)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    uvicorn.run(
        create_app(model), host=args.host, port=args.port, log_level=args.log_level
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
