"""Length-prefixed binary framing and typed payload codecs.

Frame layout over a reliable byte stream:

    magic (2B = 0x53 0x43) | version (1B = 0x01) | frame type (1B)
    | payload length (u32 BE, <= 16 MiB) | payload

All payload fields are length-prefixed in a fixed order: u16 BE prefixes
for strings and key blobs, u32 BE for sealed-envelope fields (a 64 KiB
letter body does not fit a u16-prefixed field). Decoding is strict in both
directions: truncated fields and trailing bytes are malformed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

MAGIC = b"\x53\x43"
VERSION = 1
HEADER_SIZE = 8
MAX_PAYLOAD = 16 * 1024 * 1024


class WireError(Exception):
    """Base class for framing and payload codec failures."""


class PayloadTooLarge(WireError):
    pass


class BadMagic(WireError):
    pass


class UnknownVersion(WireError):
    pass


class UnknownFrameType(WireError):
    pass


class MalformedPayload(WireError):
    pass


class FrameType(IntEnum):
    REGISTER = 0x01
    LOGIN = 0x02
    ROSTER_GET = 0x03
    ROSTER_ADD = 0x04
    SEND = 0x05
    RELAY = 0x06
    DELIVER = 0x07
    FEDERATE = 0x08
    ACK = 0x09
    ERROR = 0x0A
    PUBKEY_GET = 0x0B
    PUBKEY_RESP = 0x0C


# Server-side error codes carried in ERROR payloads.
class ErrorCode(IntEnum):
    BAD_CREDENTIALS = 1
    DUPLICATE_USER = 2
    UNKNOWN_RECIPIENT = 3
    NOT_AUTHENTICATED = 4
    MALFORMED_PAYLOAD = 5
    UNKNOWN_AGENCY = 6
    WEAK_PASSWORD = 7
    DUPLICATE_EMAIL = 8
    UNKNOWN_EMAIL = 9


@dataclass(frozen=True)
class Frame:
    frame_type: FrameType
    payload: bytes = b""


def encode_frame(frame: Frame) -> bytes:
    if len(frame.payload) > MAX_PAYLOAD:
        raise PayloadTooLarge(f"payload is {len(frame.payload)} bytes, cap {MAX_PAYLOAD}")
    return MAGIC + struct.pack(">BBI", VERSION, frame.frame_type, len(frame.payload)) + frame.payload


def decode_frame(buf: bytes | bytearray | memoryview) -> tuple[Frame, int] | None:
    """Decode one frame from the head of buf.

    Returns (frame, bytes_consumed), or None when buf holds only a prefix.
    Header faults raise as soon as the offending byte is present; the
    declared length is validated before any payload is read, so hostile
    lengths never cause over-allocation.
    """
    buf = memoryview(buf)
    if len(buf) >= 1 and buf[0] != MAGIC[0]:
        raise BadMagic("first magic byte wrong")
    if len(buf) >= 2 and buf[1] != MAGIC[1]:
        raise BadMagic("second magic byte wrong")
    if len(buf) >= 3 and buf[2] != VERSION:
        raise UnknownVersion(f"version {buf[2]:#04x}")
    if len(buf) >= 4 and buf[3] not in FrameType._value2member_map_:
        raise UnknownFrameType(f"frame type {buf[3]:#04x}")
    if len(buf) < HEADER_SIZE:
        return None
    (length,) = struct.unpack_from(">I", buf, 4)
    if length > MAX_PAYLOAD:
        raise PayloadTooLarge(f"declared payload {length} exceeds cap {MAX_PAYLOAD}")
    total = HEADER_SIZE + length
    if len(buf) < total:
        return None
    return Frame(FrameType(buf[3]), bytes(buf[HEADER_SIZE:total])), total


class FrameDecoder:
    """Per-connection reassembly buffer; feed() yields complete frames in order."""

    def __init__(self) -> None:
        self._buf = bytearray()

    def feed(self, data: bytes) -> list[Frame]:
        self._buf.extend(data)
        frames: list[Frame] = []
        while True:
            result = decode_frame(self._buf)
            if result is None:
                return frames
            frame, consumed = result
            del self._buf[:consumed]
            frames.append(frame)

    @property
    def pending(self) -> int:
        return len(self._buf)


# ---------------------------------------------------------------------------
# Field primitives
# ---------------------------------------------------------------------------

class _Reader:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.off = 0

    def bytes16(self) -> bytes:
        if self.off + 2 > len(self.data):
            raise MalformedPayload("truncated u16 length prefix")
        (n,) = struct.unpack_from(">H", self.data, self.off)
        self.off += 2
        if self.off + n > len(self.data):
            raise MalformedPayload("truncated field")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def bytes32(self) -> bytes:
        if self.off + 4 > len(self.data):
            raise MalformedPayload("truncated u32 length prefix")
        (n,) = struct.unpack_from(">I", self.data, self.off)
        self.off += 4
        if self.off + n > len(self.data):
            raise MalformedPayload("truncated field")
        out = self.data[self.off : self.off + n]
        self.off += n
        return out

    def str16(self) -> str:
        try:
            return self.bytes16().decode("utf-8")
        except UnicodeDecodeError:
            raise MalformedPayload("field is not UTF-8") from None

    def u8(self) -> int:
        if self.off + 1 > len(self.data):
            raise MalformedPayload("truncated u8")
        out = self.data[self.off]
        self.off += 1
        return out

    def u16(self) -> int:
        if self.off + 2 > len(self.data):
            raise MalformedPayload("truncated u16")
        (out,) = struct.unpack_from(">H", self.data, self.off)
        self.off += 2
        return out

    def u64(self) -> int:
        if self.off + 8 > len(self.data):
            raise MalformedPayload("truncated u64")
        (out,) = struct.unpack_from(">Q", self.data, self.off)
        self.off += 8
        return out

    def finish(self) -> None:
        if self.off != len(self.data):
            raise MalformedPayload(f"{len(self.data) - self.off} trailing bytes")


def _bytes16(b: bytes) -> bytes:
    if len(b) > 0xFFFF:
        raise MalformedPayload(f"field of {len(b)} bytes exceeds u16 prefix")
    return struct.pack(">H", len(b)) + b


def _bytes32(b: bytes) -> bytes:
    if len(b) > 0xFFFFFFFF:
        raise MalformedPayload("field exceeds u32 prefix")
    return struct.pack(">I", len(b)) + b


def _str16(s: str) -> bytes:
    return _bytes16(s.encode("utf-8"))


# ---------------------------------------------------------------------------
# Typed payloads
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RelayHeader:
    """Hop budget, remaining path of node ids, and the terminal endpoint id."""

    ttl: int
    remaining_path: tuple[str, ...]
    terminal: str

    def __post_init__(self) -> None:
        if not 0 <= self.ttl <= 0xFF:
            raise MalformedPayload(f"ttl {self.ttl} out of u8 range")
        for a, b in zip(self.remaining_path, self.remaining_path[1:]):
            if a == b:
                raise MalformedPayload(f"immediate duplicate hop {a!r}")


@dataclass(frozen=True)
class RegisterPayload:
    user: str
    email: str
    password: str
    pubkey: bytes


@dataclass(frozen=True)
class LoginPayload:
    user: str
    password: str


@dataclass(frozen=True)
class RosterGetPayload:
    pass


@dataclass(frozen=True)
class RosterAddPayload:
    email: str


@dataclass(frozen=True)
class SendPayload:
    envelope: bytes


@dataclass(frozen=True)
class RelayPayload:
    relay_header: RelayHeader
    envelope: bytes


@dataclass(frozen=True)
class DeliverPayload:
    envelope: bytes


@dataclass(frozen=True)
class FederatePayload:
    origin_agency: str
    envelope: bytes


@dataclass(frozen=True)
class AckPayload:
    ref_id: bytes


@dataclass(frozen=True)
class ErrorPayload:
    code: int
    message: str


@dataclass(frozen=True)
class PubkeyGetPayload:
    address: str


@dataclass(frozen=True)
class PubkeyRespPayload:
    address: str
    pubkey: bytes


Payload = (
    RegisterPayload
    | LoginPayload
    | RosterGetPayload
    | RosterAddPayload
    | SendPayload
    | RelayPayload
    | DeliverPayload
    | FederatePayload
    | AckPayload
    | ErrorPayload
    | PubkeyGetPayload
    | PubkeyRespPayload
)

PAYLOAD_TYPES: dict[FrameType, type] = {
    FrameType.REGISTER: RegisterPayload,
    FrameType.LOGIN: LoginPayload,
    FrameType.ROSTER_GET: RosterGetPayload,
    FrameType.ROSTER_ADD: RosterAddPayload,
    FrameType.SEND: SendPayload,
    FrameType.RELAY: RelayPayload,
    FrameType.DELIVER: DeliverPayload,
    FrameType.FEDERATE: FederatePayload,
    FrameType.ACK: AckPayload,
    FrameType.ERROR: ErrorPayload,
    FrameType.PUBKEY_GET: PubkeyGetPayload,
    FrameType.PUBKEY_RESP: PubkeyRespPayload,
}

FRAME_TYPE_OF = {cls: ft for ft, cls in PAYLOAD_TYPES.items()}


def _encode_relay_header(h: RelayHeader) -> bytes:
    parts = [struct.pack(">BH", h.ttl, len(h.remaining_path))]
    parts.extend(_str16(hop) for hop in h.remaining_path)
    parts.append(_str16(h.terminal))
    return b"".join(parts)


def _decode_relay_header(data: bytes) -> RelayHeader:
    r = _Reader(data)
    ttl = r.u8()
    count = r.u16()
    hops = tuple(r.str16() for _ in range(count))
    terminal = r.str16()
    r.finish()
    return RelayHeader(ttl=ttl, remaining_path=hops, terminal=terminal)


def encode_payload(payload: Payload) -> bytes:
    """Serialize a typed payload to its frame payload bytes."""
    if isinstance(payload, RegisterPayload):
        return (
            _str16(payload.user)
            + _str16(payload.email)
            + _str16(payload.password)
            + _bytes16(payload.pubkey)
        )
    if isinstance(payload, LoginPayload):
        return _str16(payload.user) + _str16(payload.password)
    if isinstance(payload, RosterGetPayload):
        return b""
    if isinstance(payload, RosterAddPayload):
        return _str16(payload.email)
    if isinstance(payload, SendPayload):
        return _bytes32(payload.envelope)
    if isinstance(payload, RelayPayload):
        return _bytes16(_encode_relay_header(payload.relay_header)) + _bytes32(payload.envelope)
    if isinstance(payload, DeliverPayload):
        return _bytes32(payload.envelope)
    if isinstance(payload, FederatePayload):
        return _str16(payload.origin_agency) + _bytes32(payload.envelope)
    if isinstance(payload, AckPayload):
        return _bytes16(payload.ref_id)
    if isinstance(payload, ErrorPayload):
        if not 0 <= payload.code <= 0xFFFF:
            raise MalformedPayload(f"error code {payload.code} out of u16 range")
        return struct.pack(">H", payload.code) + _str16(payload.message)
    if isinstance(payload, PubkeyGetPayload):
        return _str16(payload.address)
    if isinstance(payload, PubkeyRespPayload):
        return _str16(payload.address) + _bytes16(payload.pubkey)
    raise MalformedPayload(f"unknown payload {type(payload).__name__}")


def decode_payload(frame_type: FrameType, data: bytes) -> Payload:
    """Parse frame payload bytes into the typed payload for frame_type (strict)."""
    r = _Reader(data)
    if frame_type == FrameType.REGISTER:
        out: Payload = RegisterPayload(r.str16(), r.str16(), r.str16(), r.bytes16())
    elif frame_type == FrameType.LOGIN:
        out = LoginPayload(r.str16(), r.str16())
    elif frame_type == FrameType.ROSTER_GET:
        out = RosterGetPayload()
    elif frame_type == FrameType.ROSTER_ADD:
        out = RosterAddPayload(r.str16())
    elif frame_type == FrameType.SEND:
        out = SendPayload(r.bytes32())
    elif frame_type == FrameType.RELAY:
        out = RelayPayload(_decode_relay_header(r.bytes16()), r.bytes32())
    elif frame_type == FrameType.DELIVER:
        out = DeliverPayload(r.bytes32())
    elif frame_type == FrameType.FEDERATE:
        out = FederatePayload(r.str16(), r.bytes32())
    elif frame_type == FrameType.ACK:
        out = AckPayload(r.bytes16())
    elif frame_type == FrameType.ERROR:
        out = ErrorPayload(r.u16(), r.str16())
    elif frame_type == FrameType.PUBKEY_GET:
        out = PubkeyGetPayload(r.str16())
    elif frame_type == FrameType.PUBKEY_RESP:
        out = PubkeyRespPayload(r.str16(), r.bytes16())
    else:
        raise UnknownFrameType(f"frame type {frame_type}")
    r.finish()
    return out


def make_frame(payload: Payload) -> Frame:
    """Wrap a typed payload in its frame."""
    return Frame(FRAME_TYPE_OF[type(payload)], encode_payload(payload))


def parse_frame(frame: Frame) -> Payload:
    return decode_payload(frame.frame_type, frame.payload)


# ---------------------------------------------------------------------------
# Roster listing blob (rides inside ACK.ref_id as the ROSTER_GET response)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RosterListing:
    address: str
    online: bool
    added_at: int


def encode_roster_blob(entries: list[RosterListing]) -> bytes:
    parts = [struct.pack(">H", len(entries))]
    for e in entries:
        parts.append(_str16(e.address))
        parts.append(struct.pack(">BQ", 1 if e.online else 0, e.added_at))
    return b"".join(parts)


def decode_roster_blob(data: bytes) -> list[RosterListing]:
    r = _Reader(data)
    count = r.u16()
    entries = []
    for _ in range(count):
        address = r.str16()
        online = r.u8()
        added_at = r.u64()
        entries.append(RosterListing(address=address, online=bool(online), added_at=added_at))
    r.finish()
    return entries
