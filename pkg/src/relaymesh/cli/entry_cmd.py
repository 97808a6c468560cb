"""Entry node daemon: the agency's ingress balancer and frame firewall."""

from __future__ import annotations

import argparse
import logging
import threading

from ..config import ConfigError, load_nodes
from ..routing import EntryNode, NodeRegistry
from ..transport import TcpDaemon, parse_hostport


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="entry",
        description="Run an agency entry node: accepts SEND/RELAY only and "
                    "spreads traffic over the relay set round robin.",
    )
    ap.add_argument("--listen", required=True, help="host:port to accept frames on")
    ap.add_argument("--nodes", required=True,
                    help="node table: `node_id host:port` per line; relay rows join "
                         "the rotation, the server:<agency> row names the terminal")
    ap.add_argument("--agency", help="agency name (defaults to the server row)")
    ap.add_argument("--hop-count", type=int, default=3)
    ap.add_argument("--path-policy", choices=("round_robin", "uniform_random"),
                    default="round_robin")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")

    agency = args.agency
    rows = []
    for node_id, endpoint in load_nodes(args.nodes):
        if node_id.startswith("server:"):
            agency = agency or node_id.split(":", 1)[1]
        elif not node_id.startswith("client:"):
            rows.append((node_id, endpoint))
    if agency is None:
        raise ConfigError("agency unknown: pass --agency or add a server:<name> row")
    registry = NodeRegistry(rows)
    node = EntryNode(f"entry:{agency}", agency, registry,
                     hop_count=args.hop_count, path_policy=args.path_policy)
    host, port = parse_hostport(args.listen)
    daemon = TcpDaemon(host, port, node, name=f"entry-{agency}").start()
    print(f"entry node for agency {agency} listening on {daemon.host}:{daemon.port} "
          f"({len(registry)} relays)")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        daemon.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
