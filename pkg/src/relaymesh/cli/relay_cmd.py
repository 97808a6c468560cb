"""Relay node daemon: forwards opaque envelopes, never holds keys."""

from __future__ import annotations

import argparse
import logging
import threading
from pathlib import Path

from ..config import parse_kv
from ..routing import RelayNode
from ..transport import TcpDaemon, parse_hostport


def load_relay_config(path: str) -> dict[str, str]:
    """Relay config: `node.<id> = host:port` rows naming next hops and terminals."""
    endpoints = {}
    for key, value in parse_kv(Path(path).read_text(encoding="utf-8")).items():
        if key.startswith("node."):
            endpoints[key[len("node."):]] = value
    return endpoints


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="relay",
        description="Run a forwarding-only relay node.",
    )
    ap.add_argument("--id", required=True, help="this node's id in relay paths")
    ap.add_argument("--listen", required=True, help="host:port to accept frames on")
    ap.add_argument("--config", required=True,
                    help="key = value file with `node.<id> = host:port` rows for "
                         "every next hop and terminal (e.g. node.server:A)")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")

    endpoints = load_relay_config(args.config)
    node = RelayNode(args.id, endpoints)
    host, port = parse_hostport(args.listen)
    daemon = TcpDaemon(host, port, node, resolve=endpoints.get,
                       name=f"relay-{args.id}").start()
    print(f"relay {args.id} listening on {daemon.host}:{daemon.port}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        daemon.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
