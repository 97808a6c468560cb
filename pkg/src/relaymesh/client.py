"""Client-side session core, transport-agnostic.

Methods that perform an operation return the (destination, frame) effects to
put on the wire; handle_frame turns inbound frames into UI-level events. The
interactive CLI, the simulator clients, and tests all drive this one class.

Control operations (register, login, roster) go to the server connection.
Message sends go to the agency entry node, which only accepts SEND and RELAY
frames. Responses to control requests ride ACK frames and are correlated
FIFO per connection; send receipts are correlated by envelope digest.
"""

from __future__ import annotations

import hashlib
import time
from collections import deque
from dataclasses import dataclass, field
from random import Random
from typing import Callable

from .envelope import (
    EnvelopeError,
    KeyPair,
    LetterSealer,
    PlaintextLetter,
    SealedEnvelope,
    generate_keypair,
)
from .server import seal_password
from .wire import (
    AckPayload,
    DeliverPayload,
    ErrorPayload,
    Frame,
    LoginPayload,
    PubkeyGetPayload,
    PubkeyRespPayload,
    RegisterPayload,
    RosterAddPayload,
    RosterGetPayload,
    RosterListing,
    SendPayload,
    WireError,
    decode_roster_blob,
    make_frame,
    parse_frame,
)

SERVER_ALIAS = "server"

Effects = list[tuple[str, Frame]]


class ClientError(Exception):
    pass


class NotLoggedIn(ClientError):
    pass


class NotInRoster(ClientError):
    pass


class NoServerKey(ClientError):
    pass


@dataclass(frozen=True)
class RegisteredEvent:
    pass


@dataclass(frozen=True)
class LoginOkEvent:
    token: bytes


@dataclass(frozen=True)
class RosterEvent:
    entries: tuple[RosterListing, ...]


@dataclass(frozen=True)
class BuddyAddedEvent:
    address: str


@dataclass(frozen=True)
class SendAckEvent:
    ref: bytes


@dataclass(frozen=True)
class MessageEvent:
    letter: PlaintextLetter


@dataclass(frozen=True)
class TamperEvent:
    detail: str


@dataclass(frozen=True)
class ServerKeyEvent:
    address: str
    pubkey: bytes
    pinned_ok: bool


@dataclass(frozen=True)
class ErrorEvent:
    code: int
    message: str
    request: str | None


Event = (
    RegisteredEvent
    | LoginOkEvent
    | RosterEvent
    | BuddyAddedEvent
    | SendAckEvent
    | MessageEvent
    | TamperEvent
    | ServerKeyEvent
    | ErrorEvent
)


@dataclass
class ClientCore:
    """Session state for one principal; sans-io."""

    keypair: KeyPair = field(default_factory=generate_keypair)
    server_dest: str = "server"
    entry_dest: str | None = None
    rng: Random | None = None
    clock: Callable[[], int] = lambda: int(time.time() * 1000)
    pinned_key: bytes | None = None
    sealer: LetterSealer = field(default_factory=LetterSealer)

    def __post_init__(self) -> None:
        self.user: str | None = None
        self.token: bytes | None = None
        self.server_address: str | None = None
        self.roster: dict[str, RosterListing] = {}
        self.outbox: list[PlaintextLetter] = []
        self._requests: deque[str] = deque()
        self._pending_sends: dict[bytes, str] = {}

    # -- derived state ---------------------------------------------------------

    @property
    def logged_in(self) -> bool:
        return self.token is not None

    @property
    def agency(self) -> str | None:
        if self.server_address is None:
            return None
        return self.server_address.rsplit("@", 1)[1]

    @property
    def address(self) -> str | None:
        if self.user is None or self.agency is None:
            return None
        return f"{self.user}@{self.agency}"

    def _send_dest(self) -> str:
        return self.entry_dest if self.entry_dest is not None else self.server_dest

    def _need_key(self) -> bytes:
        if self.pinned_key is None:
            raise NoServerKey("server key not pinned yet")
        return self.pinned_key

    # -- outbound operations -----------------------------------------------------

    def hello(self) -> Effects:
        """First exchange on connect: learn the server's address and key."""
        return [(self.server_dest, make_frame(PubkeyGetPayload(SERVER_ALIAS)))]

    def register(self, user: str, email: str, password: str) -> Effects:
        sealed = seal_password(password, self._need_key(), self.rng)
        self.user = user
        self._requests.append("register")
        frame = make_frame(RegisterPayload(user, email, sealed, self.keypair.public))
        return [(self.server_dest, frame)]

    def login(self, user: str, password: str) -> Effects:
        sealed = seal_password(password, self._need_key(), self.rng)
        self.user = user
        self._requests.append("login")
        return [(self.server_dest, make_frame(LoginPayload(user, sealed)))]

    def add_buddy(self, email: str) -> Effects:
        if not self.logged_in:
            raise NotLoggedIn("add requires a session")
        self._requests.append("add")
        return [(self.server_dest, make_frame(RosterAddPayload(email)))]

    def request_roster(self) -> Effects:
        if not self.logged_in:
            raise NotLoggedIn("buddies requires a session")
        self._requests.append("roster")
        return [(self.server_dest, make_frame(RosterGetPayload()))]

    def send_message(self, buddy: str, text: str) -> Effects:
        if not self.logged_in:
            raise NotLoggedIn("send requires a session")
        if buddy not in self.roster:
            raise NotInRoster(f"{buddy} is not in the buddy list")
        if self.address is None:
            raise ClientError("own address unknown")
        letter = PlaintextLetter(self.address, buddy, text, self.clock())
        envelope = self.sealer.seal(letter, self._need_key(), self.rng).to_bytes()
        self.outbox.append(letter)
        self._pending_sends[hashlib.sha256(envelope).digest()[:8]] = buddy
        return [(self._send_dest(), make_frame(SendPayload(envelope)))]

    # -- inbound frames ------------------------------------------------------------

    def handle_frame(self, origin: str, frame: Frame) -> list[Event]:
        try:
            payload = parse_frame(frame)
        except WireError as exc:
            return [TamperEvent(f"malformed frame: {exc}")]
        if isinstance(payload, AckPayload):
            return self._on_ack(payload)
        if isinstance(payload, ErrorPayload):
            request = self._requests.popleft() if self._requests else None
            return [ErrorEvent(payload.code, payload.message, request)]
        if isinstance(payload, DeliverPayload):
            return self._on_deliver(payload)
        if isinstance(payload, PubkeyRespPayload):
            return self._on_server_key(payload)
        return []

    def _on_ack(self, p: AckPayload) -> list[Event]:
        if p.ref_id in self._pending_sends:
            del self._pending_sends[p.ref_id]
            return [SendAckEvent(p.ref_id)]
        if not self._requests:
            return []
        kind = self._requests.popleft()
        if kind == "register":
            return [RegisteredEvent()]
        if kind == "login":
            self.token = p.ref_id
            return [LoginOkEvent(p.ref_id)]
        if kind == "roster":
            try:
                entries = decode_roster_blob(p.ref_id)
            except WireError as exc:
                return [TamperEvent(f"bad roster payload: {exc}")]
            self.roster = {e.address: e for e in entries}
            return [RosterEvent(tuple(entries))]
        if kind == "add":
            address = p.ref_id.decode("utf-8", errors="replace")
            self.roster.setdefault(address, RosterListing(address, False, 0))
            return [BuddyAddedEvent(address)]
        return []

    def _on_deliver(self, p: DeliverPayload) -> list[Event]:
        try:
            letter = self.sealer.open(SealedEnvelope.from_bytes(p.envelope), self.keypair.private)
        except EnvelopeError as exc:
            return [TamperEvent(type(exc).__name__)]
        return [MessageEvent(letter)]

    def _on_server_key(self, p: PubkeyRespPayload) -> list[Event]:
        if self.pinned_key is not None and p.pubkey != self.pinned_key:
            return [ServerKeyEvent(p.address, p.pubkey, pinned_ok=False)]
        self.pinned_key = p.pubkey
        self.server_address = p.address
        return [ServerKeyEvent(p.address, p.pubkey, pinned_ok=True)]
