"""Agency server: accounts, login, roster, directory, and the audit pipeline."""

from __future__ import annotations

import hashlib

import pytest
from conftest import fast_config

from relaymesh.config import PeerEntry
from relaymesh.envelope import (
    KeyPair,
    PlaintextLetter,
    generate_keypair,
    open_letter,
    seal,
    SealedEnvelope,
)
from relaymesh.routing import NodeRegistry
from relaymesh.server import REGISTER_ACK, AgencyServer, seal_password
from relaymesh.wire import (
    AckPayload,
    ErrorCode,
    ErrorPayload,
    FederatePayload,
    Frame,
    FrameType,
    LoginPayload,
    PubkeyGetPayload,
    PubkeyRespPayload,
    RegisterPayload,
    RelayHeader,
    RelayPayload,
    RosterAddPayload,
    RosterGetPayload,
    SendPayload,
    decode_roster_blob,
    encode_frame,
    make_frame,
    parse_frame,
)

PASSWORD = "hunter2strong"


def register(server: AgencyServer, origin: str, user: str, *, email: str | None = None,
             keys: KeyPair | None = None, password: str = PASSWORD):
    keys = keys or generate_keypair(seed=f"client:{user}".encode())
    frame = make_frame(
        RegisterPayload(
            user=user,
            email=email or f"{user}@{server.agency.lower()}.example",
            password=seal_password(password, server.keypair.public),
            pubkey=keys.public,
        )
    )
    return keys, server.handle_frame(origin, frame)


def login(server: AgencyServer, origin: str, user: str, password: str = PASSWORD):
    frame = make_frame(LoginPayload(user, seal_password(password, server.keypair.public)))
    return server.handle_frame(origin, frame)


def enroll(server: AgencyServer, origin: str, user: str) -> KeyPair:
    keys, effects = register(server, origin, user)
    assert parse_frame(effects[0][1]) == AckPayload(REGISTER_ACK)
    effects = login(server, origin, user)
    assert effects[0][1].frame_type == FrameType.ACK
    return keys


def send_frame(server: AgencyServer, sender: str, recipient: str, body: str = "msg",
               sent_at: int = 1) -> tuple[PlaintextLetter, Frame]:
    letter = PlaintextLetter(sender=sender, recipient=recipient, body=body, sent_at=sent_at)
    env = seal(letter, server.keypair.public)
    return letter, make_frame(SendPayload(env.to_bytes()))


def linked_pair() -> tuple[AgencyServer, AgencyServer]:
    a_keys = generate_keypair(seed=2001)
    b_keys = generate_keypair(seed=2002)
    a = AgencyServer(fast_config("A", peers={"B": PeerEntry("peer:B", b_keys.public)}), a_keys)
    b = AgencyServer(fast_config("B", peers={"A": PeerEntry("peer:A", a_keys.public)}), b_keys)
    return a, b


def error_code(frame: Frame) -> int:
    assert frame.frame_type == FrameType.ERROR
    return parse_frame(frame).code


class TestRegister:
    def test_success_acks_and_stores_account(self, server_a):
        keys, effects = register(server_a, "conn:1", "alice")
        (dest, frame), = effects
        assert dest == "conn:1"
        assert parse_frame(frame) == AckPayload(REGISTER_ACK)
        account = server_a.accounts.accounts["alice"]
        assert account.pubkey == keys.public
        assert len(account.salt) == 16
        assert account.password_hash != PASSWORD.encode()

    def test_password_is_salted(self, server_a):
        register(server_a, "c1", "alice")
        register(server_a, "c2", "bob")
        a = server_a.accounts.accounts["alice"]
        b = server_a.accounts.accounts["bob"]
        assert a.salt != b.salt
        assert a.password_hash != b.password_hash  # same password, different salt

    @pytest.mark.parametrize("user", ["", "Alice", "al ice", "x" * 33])
    def test_bad_username_rejected(self, server_a, user):
        _, effects = register(server_a, "c1", user)
        assert error_code(effects[0][1]) == ErrorCode.MALFORMED_PAYLOAD

    @pytest.mark.parametrize("email", ["no-at-sign", "x" * 250 + "@toolong.example", "tab\t@x"])
    def test_bad_email_rejected(self, server_a, email):
        _, effects = register(server_a, "c1", "alice", email=email)
        assert error_code(effects[0][1]) == ErrorCode.MALFORMED_PAYLOAD

    def test_bad_pubkey_rejected(self, server_a):
        frame = make_frame(RegisterPayload(
            "alice", "a@x", seal_password(PASSWORD, server_a.keypair.public), b"short"))
        effects = server_a.handle_frame("c1", frame)
        assert error_code(effects[0][1]) == ErrorCode.MALFORMED_PAYLOAD

    def test_unsealed_password_rejected(self, server_a):
        frame = make_frame(RegisterPayload("alice", "a@x", "bm90LXNlYWxlZA==", b"\x00" * 32))
        effects = server_a.handle_frame("c1", frame)
        assert error_code(effects[0][1]) == ErrorCode.MALFORMED_PAYLOAD

    def test_password_sealed_to_wrong_key_rejected(self, server_a):
        stranger = generate_keypair(seed=999)
        frame = make_frame(RegisterPayload(
            "alice", "a@x", seal_password(PASSWORD, stranger.public), b"\x00" * 32))
        effects = server_a.handle_frame("c1", frame)
        assert error_code(effects[0][1]) == ErrorCode.MALFORMED_PAYLOAD

    def test_short_password_rejected(self, server_a):
        _, effects = register(server_a, "c1", "alice", password="seven77")
        assert error_code(effects[0][1]) == ErrorCode.WEAK_PASSWORD
        assert "alice" not in server_a.accounts.accounts

    def test_duplicate_user_rejected(self, server_a):
        register(server_a, "c1", "alice")
        _, effects = register(server_a, "c2", "alice", email="second@x")
        assert error_code(effects[0][1]) == ErrorCode.DUPLICATE_USER

    def test_duplicate_email_rejected(self, server_a):
        register(server_a, "c1", "alice", email="shared@x")
        _, effects = register(server_a, "c2", "bob", email="shared@x")
        assert error_code(effects[0][1]) == ErrorCode.DUPLICATE_EMAIL


class TestLogin:
    def test_success_returns_session_token(self, server_a):
        register(server_a, "c1", "alice")
        (dest, frame), = login(server_a, "c1", "alice")
        token = parse_frame(frame).ref_id
        assert len(token) == 16
        assert server_a.is_online("alice")

    def test_wrong_password_and_unknown_user_are_byte_identical(self, server_a):
        register(server_a, "c1", "alice")
        (_, wrong_pw), = login(server_a, "c1", "alice", password="not the password")
        (_, no_user), = login(server_a, "c1", "nobody")
        assert encode_frame(wrong_pw) == encode_frame(no_user)
        assert error_code(wrong_pw) == ErrorCode.BAD_CREDENTIALS
        assert not server_a.is_online("alice")

    def test_garbage_password_field_is_same_error(self, server_a):
        register(server_a, "c1", "alice")
        effects = server_a.handle_frame(
            "c1", make_frame(LoginPayload("alice", "!!! not base64 !!!")))
        (_, frame), = effects
        assert error_code(frame) == ErrorCode.BAD_CREDENTIALS

    def test_login_drains_queue_after_ack_in_fifo_order(self, server_a):
        register(server_a, "c1", "alice")
        server_a.queue.enqueue("alice", b"env-one")
        server_a.queue.enqueue("alice", b"env-two")
        effects = login(server_a, "c1", "alice")
        assert [f.frame_type for _, f in effects] == [
            FrameType.ACK, FrameType.DELIVER, FrameType.DELIVER]
        assert [parse_frame(f).envelope for _, f in effects[1:]] == [b"env-one", b"env-two"]
        assert all(dest == "c1" for dest, _ in effects)
        assert server_a.queue.depth("alice") == 0

    def test_relogin_moves_presence_to_new_connection(self, server_a):
        register(server_a, "c1", "alice")
        login(server_a, "c1", "alice")
        login(server_a, "c2", "alice")
        assert server_a._conn_of["alice"] == "c2"

    def test_disconnect_clears_presence(self, server_a):
        register(server_a, "c1", "alice")
        login(server_a, "c1", "alice")
        server_a.disconnect("c1")
        assert not server_a.is_online("alice")

    def test_disconnect_of_stale_connection_keeps_new_session(self, server_a):
        register(server_a, "c1", "alice")
        login(server_a, "c1", "alice")
        login(server_a, "c2", "alice")
        server_a.disconnect("c1")  # old socket closing must not log alice out
        assert server_a.is_online("alice")


class TestRoster:
    def test_get_requires_login(self, server_a):
        effects = server_a.handle_frame("c1", make_frame(RosterGetPayload()))
        assert error_code(effects[0][1]) == ErrorCode.NOT_AUTHENTICATED

    def test_add_requires_login(self, server_a):
        effects = server_a.handle_frame("c1", make_frame(RosterAddPayload("b@x")))
        assert error_code(effects[0][1]) == ErrorCode.NOT_AUTHENTICATED

    def test_add_local_buddy_by_email(self, server_a):
        enroll(server_a, "c1", "alice")
        register(server_a, "c2", "bob", email="bob@a.example")
        (dest, frame), = server_a.handle_frame("c1", make_frame(RosterAddPayload("bob@a.example")))
        assert dest == "c1"
        assert parse_frame(frame) == AckPayload(b"bob@A")

    def test_roster_reports_local_presence(self, server_a):
        enroll(server_a, "c1", "alice")
        register(server_a, "c2", "bob", email="bob@a.example")
        server_a.handle_frame("c1", make_frame(RosterAddPayload("bob@a.example")))

        (_, frame), = server_a.handle_frame("c1", make_frame(RosterGetPayload()))
        listing, = decode_roster_blob(parse_frame(frame).ref_id)
        assert listing.address == "bob@A"
        assert listing.online is False

        login(server_a, "c2", "bob")
        (_, frame), = server_a.handle_frame("c1", make_frame(RosterGetPayload()))
        listing, = decode_roster_blob(parse_frame(frame).ref_id)
        assert listing.online is True

    def test_empty_roster(self, server_a):
        enroll(server_a, "c1", "alice")
        (_, frame), = server_a.handle_frame("c1", make_frame(RosterGetPayload()))
        assert decode_roster_blob(parse_frame(frame).ref_id) == []

    def test_add_unknown_email_without_peers(self, server_a):
        enroll(server_a, "c1", "alice")
        (_, frame), = server_a.handle_frame("c1", make_frame(RosterAddPayload("ghost@x")))
        assert error_code(frame) == ErrorCode.UNKNOWN_EMAIL

    def test_add_remote_buddy_walks_peer_directory(self):
        a, b = linked_pair()
        enroll(a, "c1", "alice")
        keys_bob, _ = register(b, "bc1", "bob", email="bob@b.example")

        # the add turns into a directory query on the peer link
        (dest, query), = a.handle_frame("c1", make_frame(RosterAddPayload("bob@b.example")))
        assert dest == "peer:B"
        assert parse_frame(query) == PubkeyGetPayload("bob@b.example")

        # B answers an unauthenticated directory query with a hit
        (back_dest, resp), = b.handle_frame("peer:A", query)
        assert back_dest == "peer:A"
        assert parse_frame(resp) == PubkeyRespPayload("bob@B", keys_bob.public)

        # feeding the answer back completes the add
        (cdest, ack), = a.handle_frame("peer:B", resp)
        assert cdest == "c1"
        assert parse_frame(ack) == AckPayload(b"bob@B")
        assert [e.buddy for e in a.accounts.roster_of("alice")] == ["bob@B"]

    def test_peer_miss_exhausts_to_unknown_email(self):
        a, _ = linked_pair()
        enroll(a, "c1", "alice")
        (dest, query), = a.handle_frame("c1", make_frame(RosterAddPayload("ghost@b.example")))
        assert dest == "peer:B"
        miss = make_frame(PubkeyRespPayload("ghost@b.example", b""))
        (cdest, frame), = a.handle_frame("peer:B", miss)
        assert cdest == "c1"
        assert error_code(frame) == ErrorCode.UNKNOWN_EMAIL

    def test_pending_adds_resolve_in_fifo_order(self):
        a, b = linked_pair()
        enroll(a, "c1", "alice")
        register(b, "bc1", "bob", email="bob@b.example")
        register(b, "bc2", "carol", email="carol@b.example")
        a.handle_frame("c1", make_frame(RosterAddPayload("bob@b.example")))
        a.handle_frame("c1", make_frame(RosterAddPayload("carol@b.example")))
        # answers come back in order on the same peer link
        (_, ack1), = a.handle_frame("peer:B", make_frame(PubkeyRespPayload("bob@B", b"\x01" * 32)))
        (_, ack2), = a.handle_frame("peer:B", make_frame(PubkeyRespPayload("carol@B", b"\x02" * 32)))
        assert parse_frame(ack1) == AckPayload(b"bob@B")
        assert parse_frame(ack2) == AckPayload(b"carol@B")
        assert [e.buddy for e in a.accounts.roster_of("alice")] == ["bob@B", "carol@B"]

    def test_unsolicited_pubkey_resp_ignored(self, server_a):
        assert server_a.handle_frame("x", make_frame(PubkeyRespPayload("a@A", b"\x01" * 32))) == []


class TestDirectory:
    def test_server_alias_returns_address_and_key(self, server_a):
        (_, frame), = server_a.handle_frame("c1", make_frame(PubkeyGetPayload("server")))
        resp = parse_frame(frame)
        assert resp.address == "serverA@A" == server_a.address
        assert resp.pubkey == server_a.keypair.public

    def test_lookup_by_address_and_email(self, server_a):
        keys = enroll(server_a, "c1", "alice")
        for query in ("alice@A", f"alice@{server_a.agency.lower()}.example"):
            (_, frame), = server_a.handle_frame("c1", make_frame(PubkeyGetPayload(query)))
            assert parse_frame(frame) == PubkeyRespPayload("alice@A", keys.public)

    def test_authenticated_miss_is_an_error(self, server_a):
        enroll(server_a, "c1", "alice")
        (_, frame), = server_a.handle_frame("c1", make_frame(PubkeyGetPayload("ghost@A")))
        assert error_code(frame) == ErrorCode.UNKNOWN_RECIPIENT

    def test_unauthenticated_miss_is_an_empty_key_response(self, server_a):
        (_, frame), = server_a.handle_frame("peer:B", make_frame(PubkeyGetPayload("ghost@A")))
        assert parse_frame(frame) == PubkeyRespPayload("ghost@A", b"")

    def test_foreign_agency_address_is_a_miss(self, server_a):
        (_, frame), = server_a.handle_frame("peer:B", make_frame(PubkeyGetPayload("bob@B")))
        assert parse_frame(frame) == PubkeyRespPayload("bob@B", b"")


class TestSendLocal:
    def test_delivers_reseals_and_audits(self, server_a):
        enroll(server_a, "c1", "alice")
        bob_keys = enroll(server_a, "c2", "bob")
        letter, frame = send_frame(server_a, "alice@A", "bob@A", body="lunch?")
        effects = server_a.handle_frame("c1", frame)

        by_dest = dict(effects)
        deliver = parse_frame(by_dest["c2"])
        ack = parse_frame(by_dest["c1"])
        assert ack.ref_id == hashlib.sha256(parse_frame(frame).envelope).digest()[:8]

        resealed = SealedEnvelope.from_bytes(deliver.envelope)
        assert open_letter(resealed, bob_keys.private) == letter
        # resealed toward bob, no longer the wire bytes the sender produced
        assert deliver.envelope != parse_frame(frame).envelope

        record, = server_a.audit.records
        assert (record.sender, record.recipient, record.body) == ("alice@A", "bob@A", "lunch?")
        assert record.leg == "local_ingress"
        assert record.body_digest == hashlib.sha256(b"lunch?").digest()

    def test_offline_recipient_is_queued(self, server_a):
        enroll(server_a, "c1", "alice")
        register(server_a, "c2", "bob")  # never logs in
        _, frame = send_frame(server_a, "alice@A", "bob@A")
        effects = server_a.handle_frame("c1", frame)
        assert [f.frame_type for _, f in effects] == [FrameType.ACK]
        assert server_a.queue.depth("bob") == 1
        assert len(server_a.audit) == 1

    def test_unknown_recipient_errors_without_audit(self, server_a):
        enroll(server_a, "c1", "alice")
        _, frame = send_frame(server_a, "alice@A", "ghost@A")
        (dest, err), = server_a.handle_frame("c1", frame)
        assert dest == "c1"
        assert error_code(err) == ErrorCode.UNKNOWN_RECIPIENT
        assert len(server_a.audit) == 0

    def test_unknown_agency_errors_without_audit(self, server_a):
        enroll(server_a, "c1", "alice")
        _, frame = send_frame(server_a, "alice@A", "bob@Nowhere")
        (_, err), = server_a.handle_frame("c1", frame)
        assert error_code(err) == ErrorCode.UNKNOWN_AGENCY
        assert len(server_a.audit) == 0

    def test_undecryptable_send_dropped_without_audit(self, server_a):
        enroll(server_a, "c1", "alice")
        stranger = generate_keypair(seed=77)
        letter = PlaintextLetter("alice@A", "bob@A", "x", 1)
        frame = make_frame(SendPayload(seal(letter, stranger.public).to_bytes()))
        assert server_a.handle_frame("c1", frame) == []
        assert server_a.handle_frame("c1", make_frame(SendPayload(b"not an envelope"))) == []
        assert len(server_a.audit) == 0

    def test_foreign_sender_dropped(self, server_a):
        enroll(server_a, "c1", "alice")
        _, frame = send_frame(server_a, "mallory@Z", "alice@A")
        assert server_a.handle_frame("c1", frame) == []
        assert len(server_a.audit) == 0

    def test_logged_out_sender_dropped(self, server_a):
        register(server_a, "c1", "alice")  # registered but not logged in
        _, frame = send_frame(server_a, "alice@A", "alice@A")
        assert server_a.handle_frame("c1", frame) == []

    def test_relay_delivery_path(self):
        registry = NodeRegistry([("A.r1", "ep1"), ("A.r2", "ep2"), ("A.r3", "ep3")])
        server = AgencyServer(
            fast_config("A", deliver_via_relays=True),
            generate_keypair(seed=42),
            registry=registry,
        )
        enroll(server, "c1", "alice")
        enroll(server, "c2", "bob")
        _, frame = send_frame(server, "alice@A", "bob@A")
        effects = server.handle_frame("c1", frame)
        by_dest = dict(effects)
        relay = parse_frame(by_dest["ep1"])
        assert relay.relay_header.terminal == "client:bob@A"
        assert relay.relay_header.remaining_path == ("A.r1", "A.r2", "A.r3")
        assert by_dest["c1"].frame_type == FrameType.ACK


class TestFederation:
    def deliver_cross_agency(self, body="crossing"):
        a, b = linked_pair()
        enroll(a, "c1", "alice")
        bob_keys = enroll(b, "bc1", "bob")
        letter, frame = send_frame(a, "alice@A", "bob@B", body=body)
        effects_a = a.handle_frame("c1", frame)
        by_dest = dict(effects_a)
        assert by_dest["c1"].frame_type == FrameType.ACK
        federate = by_dest["peer:B"]
        assert federate.frame_type == FrameType.FEDERATE
        assert parse_frame(federate).origin_agency == "A"
        effects_b = b.handle_frame("peer:A", federate)
        return a, b, letter, bob_keys, effects_b

    def test_two_hop_delivery_and_audit(self):
        a, b, letter, bob_keys, effects_b = self.deliver_cross_agency()
        (dest, deliver), = effects_b
        assert dest == "bc1"
        env = SealedEnvelope.from_bytes(parse_frame(deliver).envelope)
        assert open_letter(env, bob_keys.private) == letter

        assert len(a.audit) == 1 and len(b.audit) == 1
        assert a.audit.records[0].leg == "local_ingress"
        assert b.audit.records[0].leg == "federated_ingress"
        assert a.audit.records[0].body == b.audit.records[0].body == "crossing"
        assert a.audit.records[0].body_digest == b.audit.records[0].body_digest

    def test_federate_from_unknown_agency_dropped(self):
        _, b = linked_pair()
        letter = PlaintextLetter("eve@Z", "bob@B", "x", 1)
        frame = make_frame(FederatePayload("Z", seal(letter, b.keypair.public).to_bytes()))
        assert b.handle_frame("peer:Z", frame) == []
        assert len(b.audit) == 0

    def test_federate_undecryptable_dropped(self):
        _, b = linked_pair()
        frame = make_frame(FederatePayload("A", b"garbage"))
        assert b.handle_frame("peer:A", frame) == []

    def test_federate_for_foreign_recipient_dropped(self):
        _, b = linked_pair()
        letter = PlaintextLetter("alice@A", "carol@C", "x", 1)
        frame = make_frame(FederatePayload("A", seal(letter, b.keypair.public).to_bytes()))
        assert b.handle_frame("peer:A", frame) == []
        assert len(b.audit) == 0

    def test_federate_for_unknown_user_errors_back(self):
        _, b = linked_pair()
        letter = PlaintextLetter("alice@A", "ghost@B", "x", 1)
        frame = make_frame(FederatePayload("A", seal(letter, b.keypair.public).to_bytes()))
        (dest, err), = b.handle_frame("peer:A", frame)
        assert dest == "peer:A"
        assert error_code(err) == ErrorCode.UNKNOWN_RECIPIENT
        assert len(b.audit) == 0

    def test_offline_remote_recipient_queued_at_destination(self):
        a, b = linked_pair()
        enroll(a, "c1", "alice")
        register(b, "bc1", "bob")  # registered, never logs in
        _, frame = send_frame(a, "alice@A", "bob@B")
        federate = dict(a.handle_frame("c1", frame))["peer:B"]
        assert b.handle_frame("peer:A", federate) == []
        assert b.queue.depth("bob") == 1
        assert len(a.audit) == len(b.audit) == 1


class TestDispatchEdges:
    def test_malformed_payload_gets_error_reply(self, server_a):
        (dest, frame), = server_a.handle_frame("c1", Frame(FrameType.REGISTER, b"\x00"))
        assert dest == "c1"
        assert error_code(frame) == ErrorCode.MALFORMED_PAYLOAD

    def test_inbound_error_frames_are_absorbed(self, server_a):
        frame = make_frame(ErrorPayload(3, "no such recipient"))
        assert server_a.handle_frame("peer:B", frame) == []

    def test_relay_frames_are_not_for_servers(self, server_a):
        frame = make_frame(RelayPayload(
            RelayHeader(ttl=3, remaining_path=("A.r1",), terminal="server:A"), b""))
        assert server_a.handle_frame("x", frame) == []

    def test_server_address_shape(self, server_a):
        assert server_a.address == "serverA@A"
