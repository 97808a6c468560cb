"""Hybrid envelope layer: keygen, letter codec, seal/open, keystore files."""

from __future__ import annotations

import dataclasses
import hashlib
import os
import stat
import string
import struct
from random import Random

import pytest
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.hashes import SHA256
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from hypothesis import given, settings
from hypothesis import strategies as st

from relaymesh.envelope import (
    KEY_SIZE,
    MAX_BODY_BYTES,
    NONCE_SIZE,
    TAG_SIZE,
    WRAPPED_KEY_SIZE,
    EnvelopeError,
    KeystoreError,
    LetterSealer,
    MalformedEnvelope,
    MalformedLetter,
    OversizeBody,
    PlaintextLetter,
    SealedEnvelope,
    TamperDetected,
    WrongKey,
    fingerprint,
    generate_keypair,
    letter_from_bytes,
    letter_to_bytes,
    load_keystore,
    open_bytes,
    open_letter,
    save_keystore,
    seal,
    seal_bytes,
    split_address,
    valid_address,
)

LETTER = PlaintextLetter(
    sender="alice@A", recipient="bob@B", body="the drop is at noon", sent_at=1_700_000_000_000
)


def oracle_open(env: SealedEnvelope, private_key: bytes) -> PlaintextLetter:
    """Reference decrypt built directly on the primitives, bypassing open_letter."""
    eph_pub = env.wrapped_key[:32]
    wrap_nonce = env.wrapped_key[32:44]
    sealed_key = env.wrapped_key[44:]
    priv = X25519PrivateKey.from_private_bytes(private_key)
    shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
    recipient_pub = priv.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )
    kek = HKDF(
        algorithm=SHA256(),
        length=32,
        salt=None,
        info=b"relaymesh.v1.key-wrap" + eph_pub + recipient_pub,
    ).derive(shared)
    message_key = AESGCM(kek).decrypt(wrap_nonce, sealed_key, None)
    pt = AESGCM(message_key).decrypt(env.nonce, env.ciphertext + env.tag, None)
    (ns,) = struct.unpack_from(">H", pt, 0)
    sender = pt[2 : 2 + ns].decode()
    off = 2 + ns
    (nr,) = struct.unpack_from(">H", pt, off)
    recipient = pt[off + 2 : off + 2 + nr].decode()
    off += 2 + nr
    (sent_at,) = struct.unpack_from(">Q", pt, off)
    (nb,) = struct.unpack_from(">I", pt, off + 8)
    body = pt[off + 12 : off + 12 + nb].decode()
    assert off + 12 + nb == len(pt)
    return PlaintextLetter(sender=sender, recipient=recipient, body=body, sent_at=sent_at)


class TestKeygen:
    def test_seeded_generation_is_deterministic(self):
        a = generate_keypair(seed=7)
        b = generate_keypair(seed=7)
        assert a == b
        assert generate_keypair(seed=8) != a

    def test_seeded_scalar_matches_hash_derivation(self):
        pair = generate_keypair(seed=7)
        expected_priv = hashlib.sha256(b"relaymesh.v1.keygen:" + b"7").digest()
        assert pair.private == expected_priv
        pub = (
            X25519PrivateKey.from_private_bytes(expected_priv)
            .public_key()
            .public_bytes(serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        )
        assert pair.public == pub

    def test_bytes_seed_uses_material_verbatim(self):
        pair = generate_keypair(seed=b"0:server:A")
        expected = hashlib.sha256(b"relaymesh.v1.keygen:0:server:A").digest()
        assert pair.private == expected

    def test_unseeded_pairs_are_distinct(self):
        a = generate_keypair()
        b = generate_keypair()
        assert a.private != b.private
        assert len(a.public) == len(a.private) == 32

    def test_repr_never_shows_private_bytes(self):
        pair = generate_keypair(seed=3)
        assert pair.private.hex() not in repr(pair)
        assert fingerprint(pair.public) in repr(pair)

    def test_fingerprint_is_16_hex_chars(self):
        fp = fingerprint(generate_keypair(seed=4).public)
        assert len(fp) == 16
        assert all(c in string.hexdigits for c in fp)


class TestAddressGrammar:
    @pytest.mark.parametrize(
        "address",
        ["alice@A", "bob_7@Bravo", "a@0", "x" * 32 + "@" + "y" * 64, "u@some-agency_01"],
    )
    def test_valid(self, address):
        assert valid_address(address)

    @pytest.mark.parametrize(
        "address",
        [
            "",
            "alice",
            "@A",
            "alice@",
            "Alice@A",  # uppercase name
            "al ice@A",
            "alice@-A",  # agency cannot start with a dash
            "alice@A@B",
            "x" * 33 + "@A",  # name too long
            "a@" + "y" * 65,  # agency too long
            "alice@A\n",  # trailing newline must not pass
            "alice@A ",
            " alice@A",
        ],
    )
    def test_invalid(self, address):
        assert not valid_address(address)

    def test_split_address(self):
        assert split_address("carol@Delta") == ("carol", "Delta")
        with pytest.raises(MalformedLetter):
            split_address("not an address")


class TestLetterCodec:
    def test_round_trip(self):
        assert letter_from_bytes(letter_to_bytes(LETTER)) == LETTER

    def test_empty_body_round_trips(self):
        letter = dataclasses.replace(LETTER, body="")
        assert letter_from_bytes(letter_to_bytes(letter)) == letter

    def test_unicode_body_round_trips(self):
        letter = dataclasses.replace(LETTER, body="znäimý ✓ \U0001f512")
        assert letter_from_bytes(letter_to_bytes(letter)) == letter

    def test_trailing_bytes_rejected(self):
        with pytest.raises(MalformedLetter):
            letter_from_bytes(letter_to_bytes(LETTER) + b"\x00")

    def test_every_truncation_rejected(self):
        data = letter_to_bytes(LETTER)
        for cut in range(len(data)):
            with pytest.raises(MalformedLetter):
                letter_from_bytes(data[:cut])

    def test_non_utf8_field_rejected(self):
        data = bytearray(letter_to_bytes(LETTER))
        data[-1] = 0xFF  # last body byte
        with pytest.raises(MalformedLetter):
            letter_from_bytes(bytes(data))

    def test_bad_addresses_rejected_on_encode(self):
        with pytest.raises(MalformedLetter):
            letter_to_bytes(dataclasses.replace(LETTER, sender="Not@@ok"))
        with pytest.raises(MalformedLetter):
            letter_to_bytes(dataclasses.replace(LETTER, recipient="bob"))

    def test_bad_address_rejected_on_decode(self):
        bad = b"".join(
            (
                struct.pack(">H", 5),
                b"UPPER",  # fails the lowercase name rule
                struct.pack(">H", 5),
                b"bob@B",
                struct.pack(">Q", 1),
                struct.pack(">I", 2),
                b"hi",
            )
        )
        with pytest.raises(MalformedLetter):
            letter_from_bytes(bad)

    def test_sent_at_range_enforced(self):
        with pytest.raises(MalformedLetter):
            letter_to_bytes(dataclasses.replace(LETTER, sent_at=-1))
        with pytest.raises(MalformedLetter):
            letter_to_bytes(dataclasses.replace(LETTER, sent_at=2**64))
        top = dataclasses.replace(LETTER, sent_at=2**64 - 1)
        assert letter_from_bytes(letter_to_bytes(top)) == top

    def test_oversize_body_rejected_on_encode(self):
        big = dataclasses.replace(LETTER, body="x" * (MAX_BODY_BYTES + 1))
        with pytest.raises(OversizeBody):
            letter_to_bytes(big)

    def test_oversize_body_rejected_on_decode(self):
        body = b"x" * (MAX_BODY_BYTES + 1)
        raw = b"".join(
            (
                struct.pack(">H", 7),
                b"alice@A",
                struct.pack(">H", 5),
                b"bob@B",
                struct.pack(">Q", 1),
                struct.pack(">I", len(body)),
                body,
            )
        )
        with pytest.raises(MalformedLetter):
            letter_from_bytes(raw)

    def test_body_at_limit_round_trips(self):
        letter = dataclasses.replace(LETTER, body="x" * MAX_BODY_BYTES)
        assert letter_from_bytes(letter_to_bytes(letter)).body == letter.body


class TestSealOpen:
    def test_round_trip(self):
        pair = generate_keypair(seed=11)
        env = seal(LETTER, pair.public)
        assert open_letter(env, pair.private) == LETTER

    def test_matches_reference_decrypt(self):
        pair = generate_keypair(seed=12)
        env = seal(LETTER, pair.public)
        assert oracle_open(env, pair.private) == LETTER

    def test_component_sizes(self):
        pair = generate_keypair(seed=13)
        env = seal(LETTER, pair.public)
        assert len(env.wrapped_key) == WRAPPED_KEY_SIZE == 92
        assert len(env.nonce) == NONCE_SIZE == 12
        assert len(env.tag) == TAG_SIZE == 16
        assert len(env.ciphertext) == len(letter_to_bytes(LETTER))

    def test_fresh_key_and_nonce_every_seal(self):
        pair = generate_keypair(seed=14)
        envs = [seal(LETTER, pair.public) for _ in range(100)]
        assert len({e.nonce for e in envs}) == 100
        assert len({e.wrapped_key for e in envs}) == 100
        assert len({e.ciphertext for e in envs}) == 100

    def test_seeded_rng_reproduces_envelope(self):
        pair = generate_keypair(seed=15)
        a = seal(LETTER, pair.public, rng=Random(99))
        b = seal(LETTER, pair.public, rng=Random(99))
        assert a == b

    def test_wrong_key_raises(self):
        right = generate_keypair(seed=16)
        wrong = generate_keypair(seed=17)
        env = seal(LETTER, right.public)
        with pytest.raises(WrongKey):
            open_letter(env, wrong.private)

    def test_wrapped_key_size_check(self):
        pair = generate_keypair(seed=18)
        env = seal(LETTER, pair.public)
        short = dataclasses.replace(env, wrapped_key=env.wrapped_key[:-1])
        with pytest.raises(WrongKey):
            open_letter(short, pair.private)

    def test_wrapped_key_mutation_raises_wrong_key(self):
        pair = generate_keypair(seed=19)
        env = seal(LETTER, pair.public)
        rng = Random(0)
        for _ in range(20):
            i = rng.randrange(len(env.wrapped_key))
            mutated = bytearray(env.wrapped_key)
            mutated[i] ^= 1 << rng.randrange(8)
            bad = dataclasses.replace(env, wrapped_key=bytes(mutated))
            with pytest.raises(WrongKey):
                open_letter(bad, pair.private)

    @pytest.mark.parametrize("field", ["nonce", "ciphertext", "tag"])
    def test_payload_mutation_raises_tamper(self, field):
        pair = generate_keypair(seed=20)
        env = seal(LETTER, pair.public)
        value = bytearray(getattr(env, field))
        value[0] ^= 0x80
        bad = dataclasses.replace(env, **{field: bytes(value)})
        with pytest.raises(TamperDetected):
            open_letter(bad, pair.private)

    def test_every_serialized_byte_flip_fails_closed(self):
        pair = generate_keypair(seed=21)
        blob = seal(LETTER, pair.public).to_bytes()
        for i in range(len(blob)):
            mutated = bytearray(blob)
            mutated[i] ^= 0xFF
            with pytest.raises(EnvelopeError):
                open_letter(SealedEnvelope.from_bytes(bytes(mutated)), pair.private)

    def test_garbled_plaintext_is_malformed_letter(self):
        # seal_bytes skips the letter codec, so open_letter hits the parser
        pair = generate_keypair(seed=22)
        env = seal_bytes(b"\xde\xad\xbe\xef", pair.public)
        with pytest.raises(MalformedLetter):
            open_letter(env, pair.private)

    def test_seal_bytes_round_trip(self):
        pair = generate_keypair(seed=23)
        blob = b"hunter2 credential blob"
        env = seal_bytes(blob, pair.public)
        assert open_bytes(env, pair.private) == blob

    def test_letter_sealer_strategy_matches_module_functions(self):
        pair = generate_keypair(seed=24)
        sealer = LetterSealer()
        env = sealer.seal(LETTER, pair.public, rng=Random(5))
        assert env == seal(LETTER, pair.public, rng=Random(5))
        assert sealer.open(env, pair.private) == LETTER

    def test_key_size_constant(self):
        assert KEY_SIZE == 32


class TestEnvelopeSerialization:
    def test_round_trip(self):
        pair = generate_keypair(seed=25)
        env = seal(LETTER, pair.public)
        assert SealedEnvelope.from_bytes(env.to_bytes()) == env

    def test_trailing_bytes_rejected(self):
        pair = generate_keypair(seed=26)
        blob = seal(LETTER, pair.public).to_bytes()
        with pytest.raises(MalformedEnvelope):
            SealedEnvelope.from_bytes(blob + b"\x00")

    def test_every_truncation_rejected(self):
        pair = generate_keypair(seed=27)
        blob = seal(LETTER, pair.public).to_bytes()
        for cut in range(len(blob)):
            with pytest.raises(MalformedEnvelope):
                SealedEnvelope.from_bytes(blob[:cut])

    def test_empty_input_rejected(self):
        with pytest.raises(MalformedEnvelope):
            SealedEnvelope.from_bytes(b"")


class TestKeystore:
    def test_round_trip(self, tmp_path):
        pair = generate_keypair(seed=30)
        path = tmp_path / "client.skey"
        save_keystore(path, pair)
        assert load_keystore(path) == pair

    def test_owner_only_permissions(self, tmp_path):
        path = tmp_path / "client.skey"
        save_keystore(path, generate_keypair(seed=31))
        mode = stat.S_IMODE(os.stat(path).st_mode)
        assert mode == 0o600

    def test_creates_parent_directories(self, tmp_path):
        path = tmp_path / "deep" / "nested" / "client.skey"
        save_keystore(path, generate_keypair(seed=32))
        assert load_keystore(path) is not None

    def test_missing_file(self, tmp_path):
        with pytest.raises(KeystoreError):
            load_keystore(tmp_path / "absent.skey")

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.skey"
        path.write_bytes(b"NOPE" + bytes(10))
        with pytest.raises(KeystoreError):
            load_keystore(path)

    def test_bad_version(self, tmp_path):
        path = tmp_path / "v9.skey"
        save_keystore(path, generate_keypair(seed=33))
        blob = bytearray(path.read_bytes())
        blob[4] = 9
        path.write_bytes(bytes(blob))
        with pytest.raises(KeystoreError):
            load_keystore(path)

    def test_truncated_and_padded_files(self, tmp_path):
        path = tmp_path / "torn.skey"
        save_keystore(path, generate_keypair(seed=34))
        blob = path.read_bytes()
        path.write_bytes(blob[:-3])
        with pytest.raises(KeystoreError):
            load_keystore(path)
        path.write_bytes(blob + b"\x00")
        with pytest.raises(KeystoreError):
            load_keystore(path)


_names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz0123456789_", min_size=1, max_size=32)
_agencies = st.builds(
    lambda head, rest: head + rest,
    st.sampled_from(string.ascii_letters + string.digits),
    st.text(alphabet=string.ascii_letters + string.digits + "_-", max_size=63),
)
_addresses = st.builds(lambda n, a: f"{n}@{a}", _names, _agencies)
_letters = st.builds(
    PlaintextLetter,
    sender=_addresses,
    recipient=_addresses,
    body=st.text(max_size=400),
    sent_at=st.integers(min_value=0, max_value=2**64 - 1),
)


class TestProperties:
    @given(_letters)
    def test_letter_codec_round_trips(self, letter):
        assert letter_from_bytes(letter_to_bytes(letter)) == letter

    @given(_addresses)
    def test_generated_addresses_satisfy_grammar(self, address):
        assert valid_address(address)
        name, agency = split_address(address)
        assert f"{name}@{agency}" == address

    @settings(max_examples=25, deadline=None)
    @given(_letters, st.integers(min_value=0, max_value=2**32))
    def test_seal_open_round_trips(self, letter, key_seed):
        pair = generate_keypair(seed=key_seed)
        env = seal(letter, pair.public)
        assert open_letter(env, pair.private) == letter
        assert SealedEnvelope.from_bytes(env.to_bytes()) == env

    @settings(max_examples=25, deadline=None)
    @given(st.binary(max_size=200), st.integers(min_value=0, max_value=2**32))
    def test_seal_bytes_round_trips(self, blob, key_seed):
        pair = generate_keypair(seed=key_seed)
        assert open_bytes(seal_bytes(blob, pair.public), pair.private) == blob
