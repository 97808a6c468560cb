"""Round-robin registry, relay forwarding, and entry-node ingress."""

from __future__ import annotations

import logging
import re
from collections import Counter
from random import Random

import pytest

from relaymesh.routing import (
    CLIENT_TERMINAL,
    SERVER_TERMINAL,
    Drop,
    EmptyRegistry,
    EntryNode,
    NodeRegistry,
    PathTooLong,
    RelayNode,
    RoutingError,
    SendTo,
    choose_path,
    event_log,
    terminal_frame_type,
    wrap_for_relay,
)
from relaymesh.wire import (
    DeliverPayload,
    Frame,
    FrameType,
    LoginPayload,
    RelayHeader,
    RelayPayload,
    SendPayload,
    make_frame,
    parse_frame,
)


def registry_abc() -> NodeRegistry:
    return NodeRegistry([("A.r1", "ep1"), ("A.r2", "ep2"), ("A.r3", "ep3")])


class TestRegistryRotation:
    def test_next_node_cycles_in_order(self):
        reg = registry_abc()
        assert [reg.next_node() for _ in range(6)] == [
            "A.r1", "A.r2", "A.r3", "A.r1", "A.r2", "A.r3",
        ]

    def test_build_path_consumes_consecutive_draws(self):
        reg = registry_abc()
        assert reg.build_path(2).hops == ("A.r1", "A.r2")
        assert reg.build_path(2).hops == ("A.r3", "A.r1")
        assert reg.build_path(2).hops == ("A.r2", "A.r3")

    def test_path_hops_are_distinct(self):
        reg = registry_abc()
        for _ in range(10):
            hops = reg.build_path(3).hops
            assert len(set(hops)) == 3

    def test_k_bounds(self):
        reg = registry_abc()
        with pytest.raises(PathTooLong):
            reg.build_path(0)
        with pytest.raises(PathTooLong):
            reg.build_path(4)
        assert reg.build_path(1).k == 1

    def test_empty_registry_raises(self):
        reg = NodeRegistry()
        with pytest.raises(EmptyRegistry):
            reg.next_node()
        with pytest.raises(EmptyRegistry):
            reg.build_path(1)

    def test_draw_counts_never_differ_by_more_than_one(self):
        reg = NodeRegistry([(f"n{i}", f"e{i}") for i in range(10)])
        counts = Counter(reg.next_node() for _ in range(301))
        assert len(counts) == 10
        assert max(counts.values()) - min(counts.values()) == 1  # 301 = 30*10 + 1

    def test_duplicate_id_rejected(self):
        reg = registry_abc()
        with pytest.raises(RoutingError):
            reg.add("A.r1", "elsewhere")

    def test_remove_unknown_rejected(self):
        with pytest.raises(RoutingError):
            registry_abc().remove("ghost")

    def test_remove_before_cursor_keeps_rotation_position(self):
        reg = registry_abc()
        assert reg.next_node() == "A.r1"  # cursor now at A.r2
        reg.remove("A.r1")
        assert reg.next_node() == "A.r2"
        assert reg.next_node() == "A.r3"

    def test_remove_at_cursor_advances_cleanly(self):
        reg = registry_abc()
        assert reg.next_node() == "A.r1"  # cursor now at A.r2
        reg.remove("A.r2")
        assert reg.next_node() == "A.r3"
        assert reg.next_node() == "A.r1"

    def test_remove_last_node_resets_cursor(self):
        reg = NodeRegistry([("only", "ep")])
        reg.next_node()
        reg.remove("only")
        assert len(reg) == 0
        assert reg.cursor == 0

    def test_endpoint_lookup(self):
        reg = registry_abc()
        assert reg.endpoint_of("A.r2") == "ep2"
        with pytest.raises(RoutingError):
            reg.endpoint_of("ghost")

    def test_random_path_is_distinct_and_seed_stable(self):
        reg = registry_abc()
        a = reg.random_path(3, Random(5)).hops
        b = reg.random_path(3, Random(5)).hops
        assert a == b
        assert len(set(a)) == 3
        with pytest.raises(PathTooLong):
            reg.random_path(4, Random(5))

    def test_choose_path_policies(self):
        reg = registry_abc()
        assert choose_path(reg, 2, "round_robin").hops == ("A.r1", "A.r2")
        assert len(choose_path(reg, 2, "uniform_random", Random(1)).hops) == 2
        with pytest.raises(RoutingError):
            choose_path(reg, 2, "shortest_queue")


class TestTerminals:
    def test_terminal_kinds(self):
        assert terminal_frame_type("server:A") == FrameType.SEND
        assert terminal_frame_type("client:bob@B") == FrameType.DELIVER
        with pytest.raises(RoutingError):
            terminal_frame_type("relay:A.r1")

    def test_wrap_for_relay_defaults_ttl_to_k_plus_2(self):
        reg = registry_abc()
        path = reg.build_path(3)
        frame = wrap_for_relay(path, SERVER_TERMINAL + "A", b"env")
        payload = parse_frame(frame)
        assert payload.relay_header.ttl == 5
        assert payload.relay_header.remaining_path == path.hops
        assert payload.relay_header.terminal == "server:A"
        assert payload.envelope == b"env"

    def test_wrap_for_relay_explicit_ttl(self):
        path = registry_abc().build_path(1)
        frame = wrap_for_relay(path, CLIENT_TERMINAL + "bob@B", b"", ttl=9)
        assert parse_frame(frame).relay_header.ttl == 9


def relay_payload(hops: tuple[str, ...], ttl: int, terminal: str = "server:A",
                  envelope: bytes = b"opaque") -> RelayPayload:
    return RelayPayload(
        relay_header=RelayHeader(ttl=ttl, remaining_path=hops, terminal=terminal),
        envelope=envelope,
    )


class TestRelayForwarding:
    def test_drops_when_not_next_hop(self):
        node = RelayNode("A.r2")
        action = node.forward(relay_payload(("A.r1", "A.r2"), ttl=4))
        assert action == Drop("not-next-hop")

    def test_drops_on_empty_path(self):
        node = RelayNode("A.r1")
        assert node.forward(relay_payload((), ttl=4)) == Drop("not-next-hop")

    def test_drops_on_zero_ttl(self):
        node = RelayNode("A.r1")
        assert node.forward(relay_payload(("A.r1", "A.r2"), ttl=0)) == Drop("ttl-expired")

    def test_drops_when_ttl_burns_out_mid_path(self):
        node = RelayNode("A.r1")
        assert node.forward(relay_payload(("A.r1", "A.r2"), ttl=1)) == Drop("ttl-expired")

    def test_middle_hop_pops_self_and_burns_ttl(self):
        node = RelayNode("A.r1", endpoints={"A.r2": "10.0.0.2:7000"})
        action = node.forward(relay_payload(("A.r1", "A.r2"), ttl=4))
        assert isinstance(action, SendTo)
        assert action.dest == "10.0.0.2:7000"
        payload = parse_frame(action.frame)
        assert payload.relay_header.remaining_path == ("A.r2",)
        assert payload.relay_header.ttl == 3
        assert payload.envelope == b"opaque"

    def test_unmapped_next_hop_falls_back_to_id(self):
        node = RelayNode("A.r1")
        action = node.forward(relay_payload(("A.r1", "A.r2"), ttl=4))
        assert action.dest == "A.r2"

    def test_last_hop_retypes_for_server_terminal(self):
        node = RelayNode("A.r3")
        action = node.forward(relay_payload(("A.r3",), ttl=2, terminal="server:A"))
        assert isinstance(action, SendTo)
        assert action.dest == "server:A"
        assert action.frame.frame_type == FrameType.SEND
        assert parse_frame(action.frame) == SendPayload(envelope=b"opaque")

    def test_last_hop_retypes_for_client_terminal(self):
        node = RelayNode("A.r3")
        action = node.forward(relay_payload(("A.r3",), ttl=1, terminal="client:bob@B"))
        assert action.dest == "client:bob@B"
        assert action.frame.frame_type == FrameType.DELIVER
        assert parse_frame(action.frame) == DeliverPayload(envelope=b"opaque")

    def test_three_hop_walk_preserves_envelope(self):
        nodes = {nid: RelayNode(nid) for nid in ("A.r1", "A.r2", "A.r3")}
        reg = registry_abc()
        frame = wrap_for_relay(reg.build_path(3), "server:A", b"sealed bytes")
        dest = "A.r1"
        hops = []
        while dest in nodes:
            hops.append(dest)
            action = nodes[dest].forward(parse_frame(frame))
            assert isinstance(action, SendTo)
            dest, frame = action.dest, action.frame
        assert hops == ["A.r1", "A.r2", "A.r3"]
        assert dest == "server:A"
        assert parse_frame(frame) == SendPayload(envelope=b"sealed bytes")

    def test_handle_frame_rejects_non_relay(self):
        node = RelayNode("A.r1")
        assert node.handle_frame("x", make_frame(LoginPayload("u", "p"))) == []

    def test_handle_frame_rejects_malformed(self):
        node = RelayNode("A.r1")
        assert node.handle_frame("x", Frame(FrameType.RELAY, b"\x00")) == []

    def test_handle_frame_forwards(self):
        node = RelayNode("A.r1")
        frame = make_frame(relay_payload(("A.r1", "A.r2"), ttl=4))
        effects = node.handle_frame("x", frame)
        assert len(effects) == 1
        dest, out = effects[0]
        assert dest == "A.r2"
        assert parse_frame(out).relay_header.remaining_path == ("A.r2",)


class TestEntryNode:
    def make_entry(self, **kwargs) -> EntryNode:
        return EntryNode("entry:A", "A", registry_abc(), **kwargs)

    def test_send_ingress_wraps_onto_relay_path(self):
        entry = self.make_entry()
        effects = entry.handle_frame("client", make_frame(SendPayload(envelope=b"env")))
        assert len(effects) == 1
        dest, frame = effects[0]
        assert dest == "ep1"
        payload = parse_frame(frame)
        assert payload.relay_header.remaining_path == ("A.r1", "A.r2", "A.r3")
        assert payload.relay_header.terminal == "server:A"
        assert payload.relay_header.ttl == 5
        assert payload.envelope == b"env"

    def test_hop_count_clamps_to_registry_size(self):
        entry = self.make_entry(hop_count=7)
        effects = entry.handle_frame("client", make_frame(SendPayload(envelope=b"")))
        assert len(parse_frame(effects[0][1]).relay_header.remaining_path) == 3

    def test_single_relay_still_routes(self):
        entry = EntryNode("entry:A", "A", NodeRegistry([("A.r1", "ep1")]))
        effects = entry.handle_frame("client", make_frame(SendPayload(envelope=b"")))
        assert parse_frame(effects[0][1]).relay_header.remaining_path == ("A.r1",)

    def test_empty_registry_drops(self):
        entry = EntryNode("entry:A", "A", NodeRegistry())
        assert entry.handle_frame("client", make_frame(SendPayload(envelope=b""))) == []

    def test_uniform_random_policy(self):
        entry = self.make_entry(path_policy="uniform_random", rng=Random(3))
        effects = entry.handle_frame("client", make_frame(SendPayload(envelope=b"")))
        hops = parse_frame(effects[0][1]).relay_header.remaining_path
        assert len(set(hops)) == 3

    def test_relay_frames_route_to_named_head(self):
        entry = self.make_entry()
        frame = make_frame(relay_payload(("A.r2", "A.r3"), ttl=4))
        assert entry.handle_frame("peer", frame) == [("ep2", frame)]

    def test_relay_frame_with_unknown_head_drops(self):
        entry = self.make_entry()
        frame = make_frame(relay_payload(("B.r9",), ttl=4))
        assert entry.handle_frame("peer", frame) == []

    def test_relay_frame_with_empty_path_drops(self):
        entry = self.make_entry()
        frame = make_frame(relay_payload((), ttl=4))
        assert entry.handle_frame("peer", frame) == []

    @pytest.mark.parametrize(
        "frame",
        [
            make_frame(LoginPayload("alice", "pw")),
            make_frame(DeliverPayload(envelope=b"x")),
            Frame(FrameType.FEDERATE, b""),
            Frame(FrameType.ACK, b""),
            Frame(FrameType.PUBKEY_GET, b""),
        ],
        ids=lambda f: f.frame_type.name,
    )
    def test_firewall_drops_everything_else(self, frame):
        assert self.make_entry().handle_frame("client", frame) == []

    def test_malformed_send_drops(self):
        assert self.make_entry().handle_frame("client", Frame(FrameType.SEND, b"\x00")) == []


class TestEventLog:
    LINE = re.compile(
        r"^ts=\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}[0-9.+:]* event=\S+ node=\S+"
    )

    def test_line_shape(self, caplog):
        with caplog.at_level(logging.INFO, logger="relaymesh.routing"):
            event_log("A.r1", "forward", next="A.r2")
            event_log("A.r1", "drop", reason="ttl-expired")
        lines = [r.getMessage() for r in caplog.records]
        assert len(lines) == 2
        for line in lines:
            assert self.LINE.match(line), line
        assert "event=forward node=A.r1 next=A.r2" in lines[0]
        assert "event=drop node=A.r1 reason=ttl-expired" in lines[1]

    def test_relay_drop_logs_reason(self, caplog):
        node = RelayNode("A.r1")
        with caplog.at_level(logging.INFO, logger="relaymesh.routing"):
            node.handle_frame("x", make_frame(relay_payload(("A.r9",), ttl=3)))
        assert any("event=drop" in r.getMessage() and "reason=not-next-hop" in r.getMessage()
                   for r in caplog.records)
