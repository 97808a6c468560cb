"""Server-side durable state: account registry, audit log, offline queues.

Every structure works purely in memory when no path is given (the simulator
runs hundreds of servers per test session) and appends to disk when one is.
File formats follow the wire field-encoding rules: u32-framed records with
u16-prefixed strings, so the same reader primitives parse both.
"""

from __future__ import annotations

import hashlib
import os
import re
import struct
import threading
from dataclasses import dataclass
from pathlib import Path

from .wire import MalformedPayload, _bytes16, _Reader, _str16

USERNAME_RE = re.compile(r"[a-z0-9_]{1,32}\Z")

ACCOUNT_TAG = 1
ROSTER_TAG = 2


class StorageError(Exception):
    pass


@dataclass(frozen=True)
class Account:
    user: str
    email: str
    salt: bytes
    password_hash: bytes
    pubkey: bytes
    created_at: int


@dataclass(frozen=True)
class RosterEntry:
    owner: str
    buddy: str
    added_at: int


@dataclass(frozen=True)
class AuditRecord:
    seq: int
    ts: int
    sender: str
    recipient: str
    body_digest: bytes
    body: str
    leg: str


class AccountStore:
    """Accounts and rosters; mutations append tagged records to accounts.db."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self.accounts: dict[str, Account] = {}
        self.emails: dict[str, str] = {}
        self.rosters: dict[str, list[RosterEntry]] = {}
        if self._path is not None and self._path.exists():
            self._replay(self._path.read_bytes())

    def _replay(self, data: bytes) -> None:
        off = 0
        while off < len(data):
            if off + 4 > len(data):
                raise StorageError("truncated record frame")
            (n,) = struct.unpack_from(">I", data, off)
            off += 4
            if off + n > len(data):
                raise StorageError("truncated record body")
            self._apply(data[off : off + n])
            off += n

    def _apply(self, record: bytes) -> None:
        r = _Reader(record)
        tag = r.u8()
        if tag == ACCOUNT_TAG:
            account = Account(
                user=r.str16(),
                email=r.str16(),
                salt=r.bytes16(),
                password_hash=r.bytes16(),
                pubkey=r.bytes16(),
                created_at=r.u64(),
            )
            r.finish()
            self.accounts[account.user] = account
            self.emails[account.email] = account.user
        elif tag == ROSTER_TAG:
            entry = RosterEntry(owner=r.str16(), buddy=r.str16(), added_at=r.u64())
            r.finish()
            self.rosters.setdefault(entry.owner, []).append(entry)
        else:
            raise StorageError(f"unknown record tag {tag}")

    def _append(self, record: bytes) -> None:
        if self._path is None:
            return
        self._path.parent.mkdir(parents=True, exist_ok=True)
        with open(self._path, "ab") as fh:
            fh.write(struct.pack(">I", len(record)) + record)

    def add_account(self, user: str, email: str, salt: bytes, password_hash: bytes,
                    pubkey: bytes, created_at: int) -> Account:
        with self._lock:
            if user in self.accounts:
                raise StorageError(f"duplicate user {user!r}")
            if email in self.emails:
                raise StorageError(f"duplicate email {email!r}")
            account = Account(user, email, salt, password_hash, pubkey, created_at)
            record = (
                bytes([ACCOUNT_TAG])
                + _str16(user)
                + _str16(email)
                + _bytes16(salt)
                + _bytes16(password_hash)
                + _bytes16(pubkey)
                + struct.pack(">Q", created_at)
            )
            self._append(record)
            self.accounts[user] = account
            self.emails[email] = user
            return account

    def add_roster_entry(self, owner: str, buddy: str, added_at: int) -> RosterEntry:
        with self._lock:
            entry = RosterEntry(owner, buddy, added_at)
            record = bytes([ROSTER_TAG]) + _str16(owner) + _str16(buddy) + struct.pack(">Q", added_at)
            self._append(record)
            self.rosters.setdefault(owner, []).append(entry)
            return entry

    def roster_of(self, owner: str) -> list[RosterEntry]:
        return list(self.rosters.get(owner, []))

    def by_email(self, email: str) -> Account | None:
        user = self.emails.get(email)
        return self.accounts.get(user) if user is not None else None


def _escape_body(body: str) -> str:
    return (
        body.replace("\\", "\\\\")
        .replace("\t", "\\t")
        .replace("\n", "\\n")
        .replace("\r", "\\r")
    )


def _unescape_body(text: str) -> str:
    out: list[str] = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "\\" and i + 1 < len(text):
            nxt = text[i + 1]
            mapped = {"\\": "\\", "t": "\t", "n": "\n", "r": "\r"}.get(nxt)
            if mapped is not None:
                out.append(mapped)
                i += 2
                continue
        out.append(ch)
        i += 1
    return "".join(out)


class AuditLog:
    """Append-only monitoring record; seq is strictly increasing from 1."""

    def __init__(self, path: str | os.PathLike | None = None) -> None:
        self._path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        self.records: list[AuditRecord] = []
        if self._path is not None and self._path.exists():
            for line in self._path.read_text(encoding="utf-8").splitlines():
                if line:
                    self.records.append(parse_audit_line(line))

    def append(self, ts: int, sender: str, recipient: str, body: str, leg: str) -> AuditRecord:
        with self._lock:
            seq = len(self.records) + 1
            record = AuditRecord(
                seq=seq,
                ts=ts,
                sender=sender,
                recipient=recipient,
                body_digest=hashlib.sha256(body.encode("utf-8")).digest(),
                body=body,
                leg=leg,
            )
            self.records.append(record)
            if self._path is not None:
                self._path.parent.mkdir(parents=True, exist_ok=True)
                with open(self._path, "a", encoding="utf-8") as fh:
                    fh.write(format_audit_line(record) + "\n")
            return record

    def __len__(self) -> int:
        return len(self.records)


def format_audit_line(record: AuditRecord) -> str:
    return "\t".join(
        (
            str(record.seq),
            str(record.ts),
            record.sender,
            record.recipient,
            record.body_digest.hex(),
            _escape_body(record.body),
        )
    )


def parse_audit_line(line: str) -> AuditRecord:
    cols = line.split("\t")
    if len(cols) != 6:
        raise StorageError(f"audit line has {len(cols)} columns, expected 6")
    return AuditRecord(
        seq=int(cols[0]),
        ts=int(cols[1]),
        sender=cols[2],
        recipient=cols[3],
        body_digest=bytes.fromhex(cols[4]),
        body=_unescape_body(cols[5]),
        leg="",
    )


class DeliveryQueue:
    """Per-recipient FIFO of sealed envelopes, drained exactly once on login."""

    def __init__(self, directory: str | os.PathLike | None = None) -> None:
        self._dir = Path(directory) if directory is not None else None
        self._lock = threading.Lock()
        self._queues: dict[str, list[bytes]] = {}
        if self._dir is not None and self._dir.exists():
            for entry in sorted(self._dir.glob("*.q")):
                self._queues[entry.stem] = list(_read_queue_file(entry.read_bytes()))

    def _file(self, user: str) -> Path:
        assert self._dir is not None
        return self._dir / f"{user}.q"

    def enqueue(self, user: str, envelope: bytes) -> None:
        with self._lock:
            self._queues.setdefault(user, []).append(envelope)
            if self._dir is not None:
                self._dir.mkdir(parents=True, exist_ok=True)
                with open(self._file(user), "ab") as fh:
                    fh.write(struct.pack(">I", len(envelope)) + envelope)

    def drain(self, user: str) -> list[bytes]:
        with self._lock:
            pending = self._queues.pop(user, [])
            if self._dir is not None:
                self._file(user).unlink(missing_ok=True)
            return pending

    def depth(self, user: str) -> int:
        return len(self._queues.get(user, []))


def _read_queue_file(data: bytes) -> list[bytes]:
    """Queue files are concatenated u32-prefixed envelope blobs (DELIVER payloads)."""
    r = _Reader(data)
    out: list[bytes] = []
    try:
        while r.off < len(data):
            out.append(r.bytes32())
    except MalformedPayload as exc:
        raise StorageError(f"corrupt queue file: {exc}") from exc
    return out
