"""Hybrid sealed envelopes: X25519 key wrap around AES-256-GCM payloads.

Every seal draws a fresh 256-bit message key and 96-bit nonce, encrypts the
canonical letter bytes under AES-256-GCM, and wraps the message key to the
recipient's public key via an ephemeral X25519 exchange + HKDF-SHA256.
Opening reverses the pipeline and fails closed: a wrap that does not
authenticate is a key mismatch, a payload that does not authenticate is
tampering, and decrypted bytes that do not parse are a malformed letter.
Private keys live in keystore files and never ride the wire.
"""

from __future__ import annotations

import hashlib
import os
import re
import secrets
import stat
import struct
from dataclasses import dataclass
from random import Random

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

KEY_SIZE = 32
NONCE_SIZE = 12
TAG_SIZE = 16
# eph pub (32) + wrap nonce (12) + wrapped 32-byte key with GCM tag (48)
WRAPPED_KEY_SIZE = 92

MAX_BODY_BYTES = 64 * 1024

_WRAP_INFO = b"relaymesh.v1.key-wrap"
_KEYGEN_SALT = b"relaymesh.v1.keygen:"

KEYSTORE_MAGIC = b"SKEY"
KEYSTORE_VERSION = 1

_NAME_RE = re.compile(r"[a-z0-9_]{1,32}")
_AGENCY_RE = re.compile(r"[A-Za-z0-9][A-Za-z0-9_-]{0,63}")
# \Z, not $: a trailing newline must not sneak into an address
_ADDRESS_RE = re.compile(
    rf"\A(?P<name>{_NAME_RE.pattern})@(?P<agency>{_AGENCY_RE.pattern})\Z"
)


class EnvelopeError(Exception):
    """Base class for sealing/opening failures."""


class OversizeBody(EnvelopeError):
    """Letter body exceeds MAX_BODY_BYTES."""


class WrongKey(EnvelopeError):
    """The wrapped message key does not unwrap under this private key."""


class TamperDetected(EnvelopeError):
    """Payload authentication failed; the envelope was modified."""


class MalformedLetter(EnvelopeError):
    """Bytes do not parse as a canonical letter."""


class MalformedEnvelope(EnvelopeError):
    """Bytes do not parse as a serialized envelope."""


class KeystoreError(EnvelopeError):
    """Keystore file is missing, truncated, or not a keystore."""


def valid_address(address: str) -> bool:
    """True iff address matches the ``name@agency`` grammar."""
    return _ADDRESS_RE.match(address) is not None


def split_address(address: str) -> tuple[str, str]:
    m = _ADDRESS_RE.match(address)
    if m is None:
        raise MalformedLetter(f"bad principal address: {address!r}")
    return m.group("name"), m.group("agency")


@dataclass(frozen=True)
class KeyPair:
    """Raw X25519 key pair. The private half must never be serialized onto the wire."""

    public: bytes
    private: bytes

    def __repr__(self) -> str:  # keep private bytes out of logs and tracebacks
        return f"KeyPair(fingerprint={fingerprint(self.public)})"


@dataclass(frozen=True)
class PlaintextLetter:
    """One routed message: principal addresses, UTF-8 body, ms-since-epoch timestamp."""

    sender: str
    recipient: str
    body: str
    sent_at: int


@dataclass(frozen=True)
class SealedEnvelope:
    """Opaque hybrid ciphertext: wrapped message key, nonce, body ciphertext, tag."""

    wrapped_key: bytes
    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def to_bytes(self) -> bytes:
        """Canonical serialization; round-trips through from_bytes."""
        return b"".join(
            (
                struct.pack(">H", len(self.wrapped_key)),
                self.wrapped_key,
                struct.pack(">H", len(self.nonce)),
                self.nonce,
                struct.pack(">I", len(self.ciphertext)),
                self.ciphertext,
                struct.pack(">H", len(self.tag)),
                self.tag,
            )
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "SealedEnvelope":
        try:
            wrapped, off = _take_prefixed16(data, 0)
            nonce, off = _take_prefixed16(data, off)
            ciphertext, off = _take_prefixed32(data, off)
            tag, off = _take_prefixed16(data, off)
        except ValueError as exc:
            raise MalformedEnvelope(str(exc)) from None
        if off != len(data):
            raise MalformedEnvelope("trailing bytes after envelope")
        return cls(wrapped_key=wrapped, nonce=nonce, ciphertext=ciphertext, tag=tag)


def _take_prefixed16(data: bytes, off: int) -> tuple[bytes, int]:
    if off + 2 > len(data):
        raise ValueError("truncated length prefix")
    (n,) = struct.unpack_from(">H", data, off)
    off += 2
    if off + n > len(data):
        raise ValueError("truncated field")
    return bytes(data[off : off + n]), off + n


def _take_prefixed32(data: bytes, off: int) -> tuple[bytes, int]:
    if off + 4 > len(data):
        raise ValueError("truncated length prefix")
    (n,) = struct.unpack_from(">I", data, off)
    off += 4
    if off + n > len(data):
        raise ValueError("truncated field")
    return bytes(data[off : off + n]), off + n


def _rand_bytes(rng: Random | None, n: int) -> bytes:
    return rng.randbytes(n) if rng is not None else secrets.token_bytes(n)


def generate_keypair(seed: int | bytes | None = None) -> KeyPair:
    """Create an X25519 key pair.

    Without a seed the private scalar is cryptographically random. A seed
    (test topologies only) derives the scalar from SHA-256, so the same seed
    always yields the same pair.
    """
    if seed is None:
        priv_obj = X25519PrivateKey.generate()
    else:
        material = seed if isinstance(seed, bytes) else str(int(seed)).encode()
        priv_obj = X25519PrivateKey.from_private_bytes(
            hashlib.sha256(_KEYGEN_SALT + material).digest()
        )
    private = priv_obj.private_bytes(
        serialization.Encoding.Raw,
        serialization.PrivateFormat.Raw,
        serialization.NoEncryption(),
    )
    public = priv_obj.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    return KeyPair(public=public, private=private)


def fingerprint(public_key: bytes) -> str:
    """16 hex chars identifying a public key in directories and logs."""
    return hashlib.sha256(public_key).hexdigest()[:16]


def _derive_wrap_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    kdf = HKDF(
        algorithm=SHA256(),
        length=KEY_SIZE,
        salt=None,
        info=_WRAP_INFO + eph_pub + recipient_pub,
    )
    return kdf.derive(shared)


def _wrap_key(message_key: bytes, recipient_pub: bytes, rng: Random | None) -> bytes:
    if rng is None:
        eph_priv = X25519PrivateKey.generate()
    else:
        eph_priv = X25519PrivateKey.from_private_bytes(rng.randbytes(32))
    eph_pub = eph_priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    shared = eph_priv.exchange(X25519PublicKey.from_public_bytes(recipient_pub))
    kek = _derive_wrap_key(shared, eph_pub, recipient_pub)
    wrap_nonce = _rand_bytes(rng, NONCE_SIZE)
    sealed = AESGCM(kek).encrypt(wrap_nonce, message_key, None)
    return eph_pub + wrap_nonce + sealed


def _unwrap_key(wrapped: bytes, private_key: bytes) -> bytes:
    if len(wrapped) != WRAPPED_KEY_SIZE:
        raise WrongKey("wrapped key has wrong size")
    eph_pub = wrapped[:32]
    wrap_nonce = wrapped[32 : 32 + NONCE_SIZE]
    sealed = wrapped[32 + NONCE_SIZE :]
    try:
        priv = X25519PrivateKey.from_private_bytes(private_key)
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        recipient_pub = priv.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        kek = _derive_wrap_key(shared, eph_pub, recipient_pub)
        return AESGCM(kek).decrypt(wrap_nonce, sealed, None)
    except (InvalidTag, ValueError) as exc:
        # ValueError covers low-order points yielding an all-zero shared secret
        raise WrongKey("message key does not unwrap") from exc


def seal_bytes(data: bytes, recipient_pub: bytes, rng: Random | None = None) -> SealedEnvelope:
    """Seal an opaque byte string (credential blobs; letters go through seal())."""
    message_key = _rand_bytes(rng, KEY_SIZE)
    nonce = _rand_bytes(rng, NONCE_SIZE)
    ct_and_tag = AESGCM(message_key).encrypt(nonce, data, None)
    return SealedEnvelope(
        wrapped_key=_wrap_key(message_key, recipient_pub, rng),
        nonce=nonce,
        ciphertext=ct_and_tag[:-TAG_SIZE],
        tag=ct_and_tag[-TAG_SIZE:],
    )


def open_bytes(env: SealedEnvelope, private_key: bytes) -> bytes:
    """Unwrap and decrypt; raises WrongKey or TamperDetected, never partial data."""
    message_key = _unwrap_key(env.wrapped_key, private_key)
    try:
        return AESGCM(message_key).decrypt(env.nonce, env.ciphertext + env.tag, None)
    except InvalidTag:
        raise TamperDetected("payload authentication failed") from None


def letter_to_bytes(letter: PlaintextLetter) -> bytes:
    """Canonical letter encoding: length-prefixed sender, recipient, u64 sent_at, body."""
    if not valid_address(letter.sender):
        raise MalformedLetter(f"bad sender address: {letter.sender!r}")
    if not valid_address(letter.recipient):
        raise MalformedLetter(f"bad recipient address: {letter.recipient!r}")
    if not 0 <= letter.sent_at < 2**64:
        raise MalformedLetter(f"sent_at out of range: {letter.sent_at}")
    body = letter.body.encode("utf-8")
    if len(body) > MAX_BODY_BYTES:
        raise OversizeBody(f"body is {len(body)} bytes, limit {MAX_BODY_BYTES}")
    sender = letter.sender.encode("utf-8")
    recipient = letter.recipient.encode("utf-8")
    return b"".join(
        (
            struct.pack(">H", len(sender)),
            sender,
            struct.pack(">H", len(recipient)),
            recipient,
            struct.pack(">Q", letter.sent_at),
            struct.pack(">I", len(body)),
            body,
        )
    )


def letter_from_bytes(data: bytes) -> PlaintextLetter:
    try:
        sender_b, off = _take_prefixed16(data, 0)
        recipient_b, off = _take_prefixed16(data, off)
        if off + 8 > len(data):
            raise ValueError("truncated sent_at")
        (sent_at,) = struct.unpack_from(">Q", data, off)
        body_b, off = _take_prefixed32(data, off + 8)
    except ValueError as exc:
        raise MalformedLetter(str(exc)) from None
    if off != len(data):
        raise MalformedLetter("trailing bytes after letter")
    try:
        sender = sender_b.decode("utf-8")
        recipient = recipient_b.decode("utf-8")
        body = body_b.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise MalformedLetter("letter fields are not UTF-8") from None
    if len(body_b) > MAX_BODY_BYTES:
        raise MalformedLetter("body exceeds size limit")
    if not valid_address(sender) or not valid_address(recipient):
        raise MalformedLetter("letter addresses fail grammar")
    return PlaintextLetter(sender=sender, recipient=recipient, body=body, sent_at=sent_at)


def seal(letter: PlaintextLetter, recipient_pub: bytes, rng: Random | None = None) -> SealedEnvelope:
    """Seal a letter to a recipient public key with a fresh key and nonce."""
    return seal_bytes(letter_to_bytes(letter), recipient_pub, rng)


def open_letter(env: SealedEnvelope, private_key: bytes) -> PlaintextLetter:
    """Open an envelope back into the exact letter that was sealed."""
    return letter_from_bytes(open_bytes(env, private_key))


class LetterSealer:
    """Seal/open strategy used by servers and clients.

    The default is the real hybrid scheme. Injecting a different strategy is
    how the test harness builds its deliberately broken negative control.
    """

    def seal(self, letter: PlaintextLetter, recipient_pub: bytes,
             rng: Random | None = None) -> SealedEnvelope:
        return seal(letter, recipient_pub, rng)

    def open(self, env: SealedEnvelope, private_key: bytes) -> PlaintextLetter:
        return open_letter(env, private_key)


def save_keystore(path: str | os.PathLike, keypair: KeyPair) -> None:
    """Write a keystore file (magic, version, length-prefixed key blobs), owner-only."""
    blob = b"".join(
        (
            KEYSTORE_MAGIC,
            bytes([KEYSTORE_VERSION]),
            struct.pack(">H", len(keypair.private)),
            keypair.private,
            struct.pack(">H", len(keypair.public)),
            keypair.public,
        )
    )
    path = os.fspath(path)
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    fd = os.open(path, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
    try:
        os.write(fd, blob)
    finally:
        os.close(fd)
    try:
        os.chmod(path, stat.S_IRUSR | stat.S_IWUSR)
    except OSError:
        pass  # platform without POSIX permissions


def load_keystore(path: str | os.PathLike) -> KeyPair:
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise KeystoreError(f"cannot read keystore: {exc}") from None
    if len(blob) < 5 or blob[:4] != KEYSTORE_MAGIC:
        raise KeystoreError("not a keystore file")
    if blob[4] != KEYSTORE_VERSION:
        raise KeystoreError(f"unsupported keystore version {blob[4]}")
    try:
        private, off = _take_prefixed16(blob, 5)
        public, off = _take_prefixed16(blob, off)
    except ValueError:
        raise KeystoreError("truncated keystore") from None
    if off != len(blob):
        raise KeystoreError("trailing bytes in keystore")
    return KeyPair(public=public, private=private)
