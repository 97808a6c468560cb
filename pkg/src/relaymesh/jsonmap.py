"""1:1 JSON mapping of typed wire payloads for the browser gateway.

Each frame maps to an object with a "type" discriminator (the frame type
name) plus the payload fields under their schema names. Binary fields are
base64; the relay header is a nested object. The same mapping backs the
conformance vector descriptions.
"""

from __future__ import annotations

import base64
from typing import Any

from .wire import (
    AckPayload,
    DeliverPayload,
    ErrorPayload,
    FederatePayload,
    Frame,
    FrameType,
    LoginPayload,
    MalformedPayload,
    Payload,
    PubkeyGetPayload,
    PubkeyRespPayload,
    RegisterPayload,
    RelayHeader,
    RelayPayload,
    RosterAddPayload,
    RosterGetPayload,
    SendPayload,
    make_frame,
    parse_frame,
)


def _b64(b: bytes) -> str:
    return base64.b64encode(b).decode("ascii")


def _unb64(s: Any) -> bytes:
    if not isinstance(s, str):
        raise MalformedPayload("binary field must be a base64 string")
    try:
        return base64.b64decode(s, validate=True)
    except Exception:
        raise MalformedPayload("invalid base64") from None


def payload_to_json(payload: Payload) -> dict[str, Any]:
    if isinstance(payload, RegisterPayload):
        body: dict[str, Any] = {
            "user": payload.user,
            "email": payload.email,
            "password": payload.password,
            "pubkey": _b64(payload.pubkey),
        }
    elif isinstance(payload, LoginPayload):
        body = {"user": payload.user, "password": payload.password}
    elif isinstance(payload, RosterGetPayload):
        body = {}
    elif isinstance(payload, RosterAddPayload):
        body = {"email": payload.email}
    elif isinstance(payload, SendPayload):
        body = {"envelope": _b64(payload.envelope)}
    elif isinstance(payload, RelayPayload):
        body = {
            "relay_header": {
                "ttl": payload.relay_header.ttl,
                "remaining_path": list(payload.relay_header.remaining_path),
                "terminal": payload.relay_header.terminal,
            },
            "envelope": _b64(payload.envelope),
        }
    elif isinstance(payload, DeliverPayload):
        body = {"envelope": _b64(payload.envelope)}
    elif isinstance(payload, FederatePayload):
        body = {"origin_agency": payload.origin_agency, "envelope": _b64(payload.envelope)}
    elif isinstance(payload, AckPayload):
        body = {"ref_id": _b64(payload.ref_id)}
    elif isinstance(payload, ErrorPayload):
        body = {"code": payload.code, "message": payload.message}
    elif isinstance(payload, PubkeyGetPayload):
        body = {"address": payload.address}
    elif isinstance(payload, PubkeyRespPayload):
        body = {"address": payload.address, "pubkey": _b64(payload.pubkey)}
    else:
        raise MalformedPayload(f"unknown payload {type(payload).__name__}")
    from .wire import FRAME_TYPE_OF

    return {"type": FRAME_TYPE_OF[type(payload)].name, **body}


def frame_to_json(frame: Frame) -> dict[str, Any]:
    return payload_to_json(parse_frame(frame))


def _req(obj: dict[str, Any], key: str, kind: type) -> Any:
    if key not in obj:
        raise MalformedPayload(f"missing field {key!r}")
    value = obj[key]
    if kind is int:
        if not isinstance(value, int) or isinstance(value, bool):
            raise MalformedPayload(f"field {key!r} must be an integer")
    elif not isinstance(value, kind):
        raise MalformedPayload(f"field {key!r} must be {kind.__name__}")
    return value


def json_to_payload(obj: dict[str, Any]) -> Payload:
    if not isinstance(obj, dict):
        raise MalformedPayload("gateway message must be a JSON object")
    name = _req(obj, "type", str)
    try:
        frame_type = FrameType[name]
    except KeyError:
        raise MalformedPayload(f"unknown frame type name {name!r}") from None

    if frame_type == FrameType.REGISTER:
        return RegisterPayload(
            _req(obj, "user", str),
            _req(obj, "email", str),
            _req(obj, "password", str),
            _unb64(_req(obj, "pubkey", str)),
        )
    if frame_type == FrameType.LOGIN:
        return LoginPayload(_req(obj, "user", str), _req(obj, "password", str))
    if frame_type == FrameType.ROSTER_GET:
        return RosterGetPayload()
    if frame_type == FrameType.ROSTER_ADD:
        return RosterAddPayload(_req(obj, "email", str))
    if frame_type == FrameType.SEND:
        return SendPayload(_unb64(_req(obj, "envelope", str)))
    if frame_type == FrameType.RELAY:
        header = _req(obj, "relay_header", dict)
        hops = _req(header, "remaining_path", list)
        if not all(isinstance(h, str) for h in hops):
            raise MalformedPayload("remaining_path entries must be strings")
        return RelayPayload(
            RelayHeader(
                ttl=_req(header, "ttl", int),
                remaining_path=tuple(hops),
                terminal=_req(header, "terminal", str),
            ),
            _unb64(_req(obj, "envelope", str)),
        )
    if frame_type == FrameType.DELIVER:
        return DeliverPayload(_unb64(_req(obj, "envelope", str)))
    if frame_type == FrameType.FEDERATE:
        return FederatePayload(_req(obj, "origin_agency", str), _unb64(_req(obj, "envelope", str)))
    if frame_type == FrameType.ACK:
        return AckPayload(_unb64(_req(obj, "ref_id", str)))
    if frame_type == FrameType.ERROR:
        return ErrorPayload(_req(obj, "code", int), _req(obj, "message", str))
    if frame_type == FrameType.PUBKEY_GET:
        return PubkeyGetPayload(_req(obj, "address", str))
    if frame_type == FrameType.PUBKEY_RESP:
        return PubkeyRespPayload(_req(obj, "address", str), _unb64(_req(obj, "pubkey", str)))
    raise MalformedPayload(f"unhandled frame type {name}")


def json_to_frame(obj: dict[str, Any]) -> Frame:
    return make_frame(json_to_payload(obj))
