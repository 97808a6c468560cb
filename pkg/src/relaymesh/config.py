"""Line-based `key = value` configuration and relay node tables."""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path


class ConfigError(Exception):
    pass


def parse_kv(text: str) -> dict[str, str]:
    """Parse `key = value` lines; `#` starts a comment, blanks are skipped."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


@dataclass(frozen=True)
class PeerEntry:
    endpoint: str
    pubkey: bytes


@dataclass
class ServerConfig:
    agency: str
    peers: dict[str, PeerEntry] = field(default_factory=dict)
    hop_count: int = 3
    path_policy: str = "round_robin"
    scrypt_n: int = 2**14
    scrypt_r: int = 8
    scrypt_p: int = 1
    deliver_via_relays: bool = False


def _parse_peer(value: str) -> PeerEntry:
    if "," not in value:
        raise ConfigError(f"peer entry {value!r} must be host:port,<pubkey-hex>")
    endpoint, pubkey_hex = (part.strip() for part in value.split(",", 1))
    try:
        pubkey = bytes.fromhex(pubkey_hex)
    except ValueError:
        raise ConfigError(f"peer pubkey {pubkey_hex!r} is not hex") from None
    if len(pubkey) != 32:
        raise ConfigError(f"peer pubkey must be 32 bytes, got {len(pubkey)}")
    return PeerEntry(endpoint=endpoint, pubkey=pubkey)


def server_config_from_kv(kv: dict[str, str], agency_override: str | None = None) -> ServerConfig:
    agency = agency_override or kv.get("agency", "")
    if not agency:
        raise ConfigError("missing `agency` setting")
    cfg = ServerConfig(agency=agency)
    for key, value in kv.items():
        if key == "agency":
            continue
        if key.startswith("peer."):
            name = key[len("peer."):]
            if name == agency:
                raise ConfigError("an agency cannot peer with itself")
            cfg.peers[name] = _parse_peer(value)
        elif key == "hop_count":
            cfg.hop_count = int(value)
        elif key == "path_policy":
            if value not in ("round_robin", "uniform_random"):
                raise ConfigError(f"unknown path_policy {value!r}")
            cfg.path_policy = value
        elif key == "scrypt_n":
            cfg.scrypt_n = int(value)
        elif key == "scrypt_r":
            cfg.scrypt_r = int(value)
        elif key == "scrypt_p":
            cfg.scrypt_p = int(value)
        elif key == "deliver_via_relays":
            cfg.deliver_via_relays = value.lower() in ("1", "true", "yes")
        else:
            raise ConfigError(f"unknown setting {key!r}")
    return cfg


def load_server_config(path: str | os.PathLike, agency_override: str | None = None) -> ServerConfig:
    return server_config_from_kv(parse_kv(Path(path).read_text(encoding="utf-8")), agency_override)


def parse_nodes(text: str) -> list[tuple[str, str]]:
    """Node table: one `node_id host:port` pair per line."""
    out: list[tuple[str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ConfigError(f"line {lineno}: expected `node_id host:port`, got {raw!r}")
        out.append((parts[0], parts[1]))
    return out


def load_nodes(path: str | os.PathLike) -> list[tuple[str, str]]:
    return parse_nodes(Path(path).read_text(encoding="utf-8"))
