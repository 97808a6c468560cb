"""Agency server: accounts, authentication, roster, key directory, and the
decrypt-for-audit, re-encrypt, forward pipeline.

The server is a sans-io state machine: handle_frame(origin, frame) returns
the list of (destination endpoint, frame) effects, and the caller (simulator
or TCP daemon) performs the sends. Every inbound message is opened under the
server key, recorded in the audit log, and resealed toward the next
principal: the local recipient's key, or the peer server's key when the
recipient lives at another agency.
"""

from __future__ import annotations

import base64
import hashlib
import hmac
import logging
import time
from collections import deque
from dataclasses import dataclass
from pathlib import Path
from random import Random
from typing import Callable

from .config import ServerConfig
from .envelope import (
    EnvelopeError,
    KeyPair,
    LetterSealer,
    SealedEnvelope,
    _rand_bytes,
    open_bytes,
    split_address,
)
from .routing import CLIENT_TERMINAL, NodeRegistry, choose_path, wrap_for_relay
from .storage import (
    AccountStore,
    AuditLog,
    DeliveryQueue,
    StorageError,
    USERNAME_RE,
)
from .wire import (
    AckPayload,
    DeliverPayload,
    ErrorCode,
    ErrorPayload,
    FederatePayload,
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
    encode_roster_blob,
    make_frame,
    parse_frame,
)

logger = logging.getLogger("relaymesh.server")

MIN_PASSWORD_LEN = 8
SESSION_TOKEN_LEN = 16
REGISTER_ACK = b"register"

Effects = list[tuple[str, Frame]]


def _error_frame(code: ErrorCode, message: str) -> Frame:
    return make_frame(ErrorPayload(int(code), message))


# One shared instance so the unknown-user and wrong-password responses are
# byte-identical (no account enumeration through response differences).
_BAD_CREDENTIALS = _error_frame(ErrorCode.BAD_CREDENTIALS, "bad credentials")


def seal_password(password: str, server_pubkey: bytes, rng: Random | None = None) -> str:
    """Clients seal the password to the pinned server key; field is base64 text."""
    from .envelope import seal_bytes

    env = seal_bytes(password.encode("utf-8"), server_pubkey, rng)
    return base64.b64encode(env.to_bytes()).decode("ascii")


@dataclass
class _PendingAdd:
    """A roster add waiting on directory answers from peer agencies."""

    client_origin: str
    owner: str
    email: str
    remaining: list[str]


class AgencyServer:
    """State machine for one agency. Drive with handle_frame / disconnect."""

    def __init__(
        self,
        config: ServerConfig,
        keypair: KeyPair,
        registry: NodeRegistry | None = None,
        data_dir: str | Path | None = None,
        rng: Random | None = None,
        clock: Callable[[], int] | None = None,
        sealer: LetterSealer | None = None,
    ) -> None:
        self.config = config
        self.agency = config.agency
        self.keypair = keypair
        self.registry = registry
        self.rng = rng
        self.clock = clock or (lambda: int(time.time() * 1000))
        self.sealer = sealer or LetterSealer()
        base = Path(data_dir) if data_dir is not None else None
        self.accounts = AccountStore(base / "accounts.db" if base else None)
        self.audit = AuditLog(base / "audit.log" if base else None)
        self.queue = DeliveryQueue(base / "queue" if base else None)
        # live-connection state: origin id -> user, user -> origin id
        self._sessions: dict[str, str] = {}
        self._conn_of: dict[str, str] = {}
        self._tokens: dict[bytes, str] = {}
        self._pending_adds: dict[str, deque[_PendingAdd]] = {}

    @property
    def address(self) -> str:
        """Directory address of the server itself, e.g. serverA@A."""
        return f"server{self.agency}@{self.agency}"

    # -- connection lifecycle -------------------------------------------------

    def disconnect(self, origin: str) -> None:
        user = self._sessions.pop(origin, None)
        if user is not None and self._conn_of.get(user) == origin:
            del self._conn_of[user]

    def is_online(self, user: str) -> bool:
        return user in self._conn_of

    # -- frame dispatch -------------------------------------------------------

    def handle_frame(self, origin: str, frame: Frame) -> Effects:
        try:
            payload = parse_frame(frame)
        except WireError as exc:
            logger.info("malformed %s from %s: %s", frame.frame_type.name, origin, exc)
            return [(origin, _error_frame(ErrorCode.MALFORMED_PAYLOAD, str(exc)))]
        if isinstance(payload, RegisterPayload):
            return self._register(origin, payload)
        if isinstance(payload, LoginPayload):
            return self._login(origin, payload)
        if isinstance(payload, RosterGetPayload):
            return self._roster_get(origin)
        if isinstance(payload, RosterAddPayload):
            return self._roster_add(origin, payload)
        if isinstance(payload, SendPayload):
            return self._handle_send(origin, payload)
        if isinstance(payload, FederatePayload):
            return self._handle_federate(origin, payload)
        if isinstance(payload, PubkeyGetPayload):
            return self._pubkey_lookup(origin, payload)
        if isinstance(payload, PubkeyRespPayload):
            return self._pubkey_response(origin, payload)
        if isinstance(payload, ErrorPayload):
            logger.info("peer error from %s: %d %s", origin, payload.code, payload.message)
            return []
        logger.info("dropping %s from %s", frame.frame_type.name, origin)
        return []

    # -- account operations ---------------------------------------------------

    def _open_password(self, field: str) -> str | None:
        """Password fields carry base64 of an envelope sealed to the server key."""
        try:
            raw = base64.b64decode(field.encode("ascii"), validate=True)
            env = SealedEnvelope.from_bytes(raw)
            return open_bytes(env, self.keypair.private).decode("utf-8")
        except (ValueError, EnvelopeError, UnicodeDecodeError):
            return None

    def _hash_password(self, password: str, salt: bytes) -> bytes:
        cfg = self.config
        maxmem = max(64 * 1024 * 1024, 256 * cfg.scrypt_r * cfg.scrypt_n)
        return hashlib.scrypt(
            password.encode("utf-8"),
            salt=salt,
            n=cfg.scrypt_n,
            r=cfg.scrypt_r,
            p=cfg.scrypt_p,
            maxmem=maxmem,
        )

    def _register(self, origin: str, p: RegisterPayload) -> Effects:
        if not USERNAME_RE.match(p.user):
            return [(origin, _error_frame(ErrorCode.MALFORMED_PAYLOAD, "bad username"))]
        if "@" not in p.email or len(p.email) > 255 or any(c in p.email for c in "\t\n\r"):
            return [(origin, _error_frame(ErrorCode.MALFORMED_PAYLOAD, "bad email"))]
        if len(p.pubkey) != 32:
            return [(origin, _error_frame(ErrorCode.MALFORMED_PAYLOAD, "bad pubkey"))]
        password = self._open_password(p.password)
        if password is None:
            return [(origin, _error_frame(ErrorCode.MALFORMED_PAYLOAD, "unreadable password"))]
        if len(password) < MIN_PASSWORD_LEN:
            return [(origin, _error_frame(ErrorCode.WEAK_PASSWORD, "password too short"))]
        if p.user in self.accounts.accounts:
            return [(origin, _error_frame(ErrorCode.DUPLICATE_USER, "username taken"))]
        if p.email in self.accounts.emails:
            return [(origin, _error_frame(ErrorCode.DUPLICATE_EMAIL, "email taken"))]
        salt = _rand_bytes(self.rng, 16)
        try:
            self.accounts.add_account(
                p.user, p.email, salt, self._hash_password(password, salt),
                p.pubkey, self.clock(),
            )
        except StorageError as exc:
            return [(origin, _error_frame(ErrorCode.DUPLICATE_USER, str(exc)))]
        return [(origin, make_frame(AckPayload(REGISTER_ACK)))]

    def _login(self, origin: str, p: LoginPayload) -> Effects:
        account = self.accounts.accounts.get(p.user)
        password = self._open_password(p.password)
        if account is None or password is None:
            return [(origin, _BAD_CREDENTIALS)]
        if not hmac.compare_digest(self._hash_password(password, account.salt),
                                   account.password_hash):
            return [(origin, _BAD_CREDENTIALS)]
        token = _rand_bytes(self.rng, SESSION_TOKEN_LEN)
        self._sessions[origin] = p.user
        self._conn_of[p.user] = origin
        self._tokens[token] = p.user
        effects: Effects = [(origin, make_frame(AckPayload(token)))]
        for envelope in self.queue.drain(p.user):
            effects.append((origin, make_frame(DeliverPayload(envelope))))
        return effects

    # -- roster ---------------------------------------------------------------

    def _authed(self, origin: str) -> str | None:
        return self._sessions.get(origin)

    def _roster_get(self, origin: str) -> Effects:
        user = self._authed(origin)
        if user is None:
            return [(origin, _error_frame(ErrorCode.NOT_AUTHENTICATED, "login first"))]
        listings = []
        for entry in self.accounts.roster_of(user):
            buddy_user, buddy_agency = split_address(entry.buddy)
            online = buddy_agency == self.agency and self.is_online(buddy_user)
            listings.append(RosterListing(entry.buddy, online, entry.added_at))
        return [(origin, make_frame(AckPayload(encode_roster_blob(listings))))]

    def _roster_add(self, origin: str, p: RosterAddPayload) -> Effects:
        user = self._authed(origin)
        if user is None:
            return [(origin, _error_frame(ErrorCode.NOT_AUTHENTICATED, "login first"))]
        account = self.accounts.by_email(p.email)
        if account is not None:
            address = f"{account.user}@{self.agency}"
            self.accounts.add_roster_entry(user, address, self.clock())
            return [(origin, make_frame(AckPayload(address.encode("utf-8"))))]
        pending = _PendingAdd(origin, user, p.email, sorted(self.config.peers))
        return self._try_next_peer(pending)

    def _try_next_peer(self, pending: _PendingAdd) -> Effects:
        if not pending.remaining:
            return [(pending.client_origin,
                     _error_frame(ErrorCode.UNKNOWN_EMAIL, "email not registered"))]
        peer = self.config.peers[pending.remaining.pop(0)]
        self._pending_adds.setdefault(peer.endpoint, deque()).append(pending)
        return [(peer.endpoint, make_frame(PubkeyGetPayload(pending.email)))]

    # -- key directory ----------------------------------------------------------

    def _pubkey_lookup(self, origin: str, p: PubkeyGetPayload) -> Effects:
        found = self._directory_lookup(p.address)
        if found is not None:
            address, pubkey = found
            return [(origin, make_frame(PubkeyRespPayload(address, pubkey)))]
        if self._authed(origin) is not None:
            return [(origin, _error_frame(ErrorCode.UNKNOWN_RECIPIENT, p.address))]
        # unauthenticated (peer-server) dialect: a miss is an empty-key response,
        # so directory answers never interleave with ERROR frames on peer links
        return [(origin, make_frame(PubkeyRespPayload(p.address, b"")))]

    def _directory_lookup(self, query: str) -> tuple[str, bytes] | None:
        # "server" lets a client learn this agency's address and key in one hop
        if query == self.address or query == "server":
            return self.address, self.keypair.public
        account = self.accounts.by_email(query)
        if account is not None:
            return f"{account.user}@{self.agency}", account.pubkey
        try:
            user, agency = split_address(query)
        except EnvelopeError:
            return None
        if agency != self.agency:
            return None
        local = self.accounts.accounts.get(user)
        if local is None:
            return None
        return query, local.pubkey

    def _pubkey_response(self, origin: str, p: PubkeyRespPayload) -> Effects:
        waiting = self._pending_adds.get(origin)
        if not waiting:
            logger.info("unsolicited PUBKEY_RESP from %s", origin)
            return []
        pending = waiting.popleft()
        if p.pubkey and p.address:
            self.accounts.add_roster_entry(pending.owner, p.address, self.clock())
            return [(pending.client_origin,
                     make_frame(AckPayload(p.address.encode("utf-8"))))]
        return self._try_next_peer(pending)

    # -- message pipeline -------------------------------------------------------

    def _handle_send(self, origin: str, p: SendPayload) -> Effects:
        try:
            letter = self.sealer.open(SealedEnvelope.from_bytes(p.envelope), self.keypair.private)
        except EnvelopeError as exc:
            logger.info("undecryptable SEND via %s: %s", origin, type(exc).__name__)
            return []
        sender_user, sender_agency = split_address(letter.sender)
        if sender_agency != self.agency:
            logger.info("SEND with foreign sender %s dropped", letter.sender)
            return []
        sender_conn = self._conn_of.get(sender_user)
        if sender_conn is None:
            logger.info("SEND from logged-out sender %s dropped", letter.sender)
            return []
        rcpt_user, rcpt_agency = split_address(letter.recipient)
        ack = make_frame(AckPayload(hashlib.sha256(p.envelope).digest()[:8]))
        if rcpt_agency == self.agency:
            account = self.accounts.accounts.get(rcpt_user)
            if account is None:
                return [(sender_conn,
                         _error_frame(ErrorCode.UNKNOWN_RECIPIENT, letter.recipient))]
            self.audit.append(self.clock(), letter.sender, letter.recipient,
                              letter.body, "local_ingress")
            resealed = self.sealer.seal(letter, account.pubkey, self.rng)
            return self._dispatch_local(rcpt_user, letter.recipient, resealed.to_bytes()) + [
                (sender_conn, ack)
            ]
        peer = self.config.peers.get(rcpt_agency)
        if peer is None:
            return [(sender_conn, _error_frame(ErrorCode.UNKNOWN_AGENCY, rcpt_agency))]
        self.audit.append(self.clock(), letter.sender, letter.recipient,
                          letter.body, "local_ingress")
        resealed = self.sealer.seal(letter, peer.pubkey, self.rng)
        federate = make_frame(FederatePayload(self.agency, resealed.to_bytes()))
        return [(peer.endpoint, federate), (sender_conn, ack)]

    def _handle_federate(self, origin: str, p: FederatePayload) -> Effects:
        if p.origin_agency not in self.config.peers:
            logger.info("FEDERATE from unknown agency %r dropped", p.origin_agency)
            return []
        try:
            letter = self.sealer.open(SealedEnvelope.from_bytes(p.envelope), self.keypair.private)
        except EnvelopeError as exc:
            logger.info("undecryptable FEDERATE from %s: %s", p.origin_agency,
                        type(exc).__name__)
            return []
        rcpt_user, rcpt_agency = split_address(letter.recipient)
        if rcpt_agency != self.agency:
            logger.info("FEDERATE for foreign recipient %s dropped", letter.recipient)
            return []
        account = self.accounts.accounts.get(rcpt_user)
        if account is None:
            return [(origin, _error_frame(ErrorCode.UNKNOWN_RECIPIENT, letter.recipient))]
        self.audit.append(self.clock(), letter.sender, letter.recipient,
                          letter.body, "federated_ingress")
        resealed = self.sealer.seal(letter, account.pubkey, self.rng)
        return self._dispatch_local(rcpt_user, letter.recipient, resealed.to_bytes())

    def _dispatch_local(self, user: str, address: str, envelope: bytes) -> Effects:
        """Deliver to an online local user (push or relay path) or queue for later."""
        conn = self._conn_of.get(user)
        if conn is None:
            self.queue.enqueue(user, envelope)
            return []
        if self.config.deliver_via_relays and self.registry is not None and len(self.registry):
            k = min(self.config.hop_count, len(self.registry))
            path = choose_path(self.registry, k, self.config.path_policy, self.rng)
            frame = wrap_for_relay(path, CLIENT_TERMINAL + address, envelope)
            return [(self.registry.endpoint_of(path.hops[0]), frame)]
        return [(conn, make_frame(DeliverPayload(envelope)))]
