"""Agency server daemon."""

from __future__ import annotations

import argparse
import logging
import threading
from pathlib import Path

from ..config import load_nodes, load_server_config
from ..envelope import fingerprint, generate_keypair, load_keystore, save_keystore
from ..routing import NodeRegistry, RoutingError
from ..server import AgencyServer
from ..transport import TcpDaemon, parse_hostport


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="server",
        description="Run an agency server: accounts, auditing, and federation.",
    )
    ap.add_argument("--agency", help="agency name (overrides the config file)")
    ap.add_argument("--listen", required=True, help="host:port to accept frames on")
    ap.add_argument("--config", required=True, help="key = value settings file")
    ap.add_argument("--data-dir", required=True,
                    help="directory for accounts.db, audit.log, queue/, server.skey")
    ap.add_argument("--nodes", help="relay table enabling relay-path delivery")
    ap.add_argument("--gateway", help="host:port for the browser websocket gateway")
    ap.add_argument("--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")

    config = load_server_config(args.config, args.agency)
    data_dir = Path(args.data_dir)
    data_dir.mkdir(parents=True, exist_ok=True)
    keystore = data_dir / "server.skey"
    if keystore.exists():
        keypair = load_keystore(keystore)
    else:
        keypair = generate_keypair()
        save_keystore(keystore, keypair)

    registry = None
    if args.nodes:
        rows = [(nid, ep) for nid, ep in load_nodes(args.nodes)
                if not nid.startswith(("server:", "client:"))]
        registry = NodeRegistry(rows)

    server = AgencyServer(config, keypair, registry=registry, data_dir=data_dir)

    def resolve(dest: str) -> str | None:
        if registry is not None:
            try:
                return registry.endpoint_of(dest)
            except RoutingError:
                pass
        return None

    host, port = parse_hostport(args.listen)
    daemon = TcpDaemon(host, port, server, resolve=resolve,
                       name=f"server-{config.agency}").start()
    gateway = None
    if args.gateway:
        from ..gateway import Gateway

        gw_host, gw_port = parse_hostport(args.gateway)
        gateway = Gateway(daemon, gw_host, gw_port).start()

    print(f"agency {config.agency} listening on {daemon.host}:{daemon.port}")
    print(f"server address {server.address} pubkey {keypair.public.hex()}")
    print(f"key fingerprint {fingerprint(keypair.public)}")
    if gateway is not None:
        print(f"gateway at {gateway.url}")
    try:
        threading.Event().wait()
    except KeyboardInterrupt:
        pass
    finally:
        if gateway is not None:
            gateway.stop()
        daemon.stop()
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
