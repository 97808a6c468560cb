"""Reference frame vectors, assembled by hand from the wire layout.

This script deliberately uses only struct/base64/json (never the package
under test) so frames.txt stays an independent cross-check of the codec:
`<hex> <json>` per line, one frame per payload type.

Layout: 0x53 0x43 | version 0x01 | type u8 | payload len u32 BE | payload.
Strings and key blobs carry u16 BE length prefixes; envelope blobs u32 BE.
"""

import base64
import json
import struct
from pathlib import Path

TYPES = {
    "REGISTER": 0x01, "LOGIN": 0x02, "ROSTER_GET": 0x03, "ROSTER_ADD": 0x04,
    "SEND": 0x05, "RELAY": 0x06, "DELIVER": 0x07, "FEDERATE": 0x08,
    "ACK": 0x09, "ERROR": 0x0A, "PUBKEY_GET": 0x0B, "PUBKEY_RESP": 0x0C,
}


def b16(data: bytes) -> bytes:
    return struct.pack(">H", len(data)) + data


def b32(data: bytes) -> bytes:
    return struct.pack(">I", len(data)) + data


def s16(text: str) -> bytes:
    return b16(text.encode("utf-8"))


def frame(name: str, payload: bytes) -> bytes:
    return b"\x53\x43" + struct.pack(">BBI", 1, TYPES[name], len(payload)) + payload


def b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


PUBKEY_A = bytes(range(1, 33))
PUBKEY_B = bytes(range(64, 96))
ENVELOPE = bytes([0xE0 + (i % 16) for i in range(24)])
REF = bytes(range(0x11, 0x19))

VECTORS = [
    (
        frame("REGISTER", s16("alice") + s16("alice@a-mail.example")
              + s16("c2VhbGVkLXB3") + b16(PUBKEY_A)),
        {"type": "REGISTER", "user": "alice", "email": "alice@a-mail.example",
         "password": "c2VhbGVkLXB3", "pubkey": b64(PUBKEY_A)},
    ),
    (
        frame("LOGIN", s16("alice") + s16("c2VhbGVkLXB3")),
        {"type": "LOGIN", "user": "alice", "password": "c2VhbGVkLXB3"},
    ),
    (frame("ROSTER_GET", b""), {"type": "ROSTER_GET"}),
    (
        frame("ROSTER_ADD", s16("bob@b-mail.example")),
        {"type": "ROSTER_ADD", "email": "bob@b-mail.example"},
    ),
    (
        frame("SEND", b32(ENVELOPE)),
        {"type": "SEND", "envelope": b64(ENVELOPE)},
    ),
    (
        frame("RELAY", b16(struct.pack(">BH", 5, 3) + s16("A.r1") + s16("A.r2")
                           + s16("A.r3") + s16("server:A")) + b32(ENVELOPE)),
        {"type": "RELAY",
         "relay_header": {"ttl": 5, "remaining_path": ["A.r1", "A.r2", "A.r3"],
                          "terminal": "server:A"},
         "envelope": b64(ENVELOPE)},
    ),
    (
        frame("DELIVER", b32(ENVELOPE)),
        {"type": "DELIVER", "envelope": b64(ENVELOPE)},
    ),
    (
        frame("FEDERATE", s16("A") + b32(ENVELOPE)),
        {"type": "FEDERATE", "origin_agency": "A", "envelope": b64(ENVELOPE)},
    ),
    (frame("ACK", b16(REF)), {"type": "ACK", "ref_id": b64(REF)}),
    (
        frame("ERROR", struct.pack(">H", 3) + s16("unknown recipient")),
        {"type": "ERROR", "code": 3, "message": "unknown recipient"},
    ),
    (
        frame("PUBKEY_GET", s16("serverA@A")),
        {"type": "PUBKEY_GET", "address": "serverA@A"},
    ),
    (
        frame("PUBKEY_RESP", s16("bob@A") + b16(PUBKEY_B)),
        {"type": "PUBKEY_RESP", "address": "bob@A", "pubkey": b64(PUBKEY_B)},
    ),
]


def main() -> None:
    out = Path(__file__).with_name("frames.txt")
    lines = [
        raw.hex() + " " + json.dumps(obj, separators=(",", ":"), sort_keys=True)
        for raw, obj in VECTORS
    ]
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(lines)} vectors to {out}")


if __name__ == "__main__":
    main()
