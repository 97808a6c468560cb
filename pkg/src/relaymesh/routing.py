"""Relay-hop routing: round-robin node selection, relay forwarding, entry ingress.

The registry rotates a shared cursor over an ordered node list, so any run
of draws spreads load evenly (per-node counts never differ by more than
one). Relays forward opaque envelopes hop by hop: they pop themselves off
the remaining path, burn TTL, and hand the final frame to the terminal
re-typed for the terminal's kind. No relay ever holds a decryption key.
"""

from __future__ import annotations

import logging
import threading
from dataclasses import dataclass
from datetime import datetime, timezone
from random import Random
from typing import Callable

from .wire import (
    DeliverPayload,
    Frame,
    FrameType,
    RelayHeader,
    RelayPayload,
    SendPayload,
    WireError,
    make_frame,
    parse_frame,
)

logger = logging.getLogger("relaymesh.routing")

# Terminal endpoint-id prefixes and the frame type each terminal kind receives.
SERVER_TERMINAL = "server:"
CLIENT_TERMINAL = "client:"

Effects = list[tuple[str, Frame]]


class RoutingError(Exception):
    pass


class EmptyRegistry(RoutingError):
    pass


class PathTooLong(RoutingError):
    pass


def event_log(node: str, event: str, reason: str = "", **fields: object) -> None:
    """Structured log line: ts=<iso8601> event=<...> node=<...> reason=<...>."""
    ts = datetime.now(timezone.utc).isoformat()
    line = f"ts={ts} event={event} node={node}"
    if reason:
        line += f" reason={reason}"
    for key, value in fields.items():
        line += f" {key}={value}"
    logger.info(line)


@dataclass(frozen=True)
class RelayPath:
    hops: tuple[str, ...]

    @property
    def k(self) -> int:
        return len(self.hops)


class NodeRegistry:
    """Ordered relay set with a rotating cursor; mutations are lock-serialized."""

    def __init__(self, nodes: list[tuple[str, str]] | None = None) -> None:
        self._nodes: list[tuple[str, str]] = []
        self._cursor = 0
        self._lock = threading.Lock()
        for node_id, endpoint in nodes or []:
            self.add(node_id, endpoint)

    def __len__(self) -> int:
        return len(self._nodes)

    @property
    def cursor(self) -> int:
        return self._cursor

    def node_ids(self) -> list[str]:
        return [node_id for node_id, _ in self._nodes]

    def add(self, node_id: str, endpoint: str) -> None:
        with self._lock:
            if any(existing == node_id for existing, _ in self._nodes):
                raise RoutingError(f"duplicate node id {node_id!r}")
            self._nodes.append((node_id, endpoint))

    def remove(self, node_id: str) -> None:
        with self._lock:
            for i, (existing, _) in enumerate(self._nodes):
                if existing == node_id:
                    del self._nodes[i]
                    if self._cursor > i:
                        self._cursor -= 1
                    if self._nodes:
                        self._cursor %= len(self._nodes)
                    else:
                        self._cursor = 0
                    return
            raise RoutingError(f"unknown node id {node_id!r}")

    def endpoint_of(self, node_id: str) -> str:
        for existing, endpoint in self._nodes:
            if existing == node_id:
                return endpoint
        raise RoutingError(f"unknown node id {node_id!r}")

    def next_node(self) -> str:
        """Return the node at the cursor and rotate the cursor by one."""
        with self._lock:
            if not self._nodes:
                raise EmptyRegistry("no relay nodes registered")
            node_id = self._nodes[self._cursor][0]
            self._cursor = (self._cursor + 1) % len(self._nodes)
            return node_id

    def build_path(self, k: int) -> RelayPath:
        """k consecutive rotations; hops are distinct because k <= node count."""
        if not self._nodes:
            raise EmptyRegistry("no relay nodes registered")
        if not 1 <= k <= len(self._nodes):
            raise PathTooLong(f"k={k} with {len(self._nodes)} nodes")
        return RelayPath(hops=tuple(self.next_node() for _ in range(k)))

    def random_path(self, k: int, rng: Random) -> RelayPath:
        """Uniformly random distinct hops (path_policy=uniform_random)."""
        if not self._nodes:
            raise EmptyRegistry("no relay nodes registered")
        if not 1 <= k <= len(self._nodes):
            raise PathTooLong(f"k={k} with {len(self._nodes)} nodes")
        return RelayPath(hops=tuple(rng.sample(self.node_ids(), k)))


def choose_path(registry: NodeRegistry, k: int, policy: str = "round_robin",
                rng: Random | None = None) -> RelayPath:
    if policy == "round_robin":
        return registry.build_path(k)
    if policy == "uniform_random":
        return registry.random_path(k, rng or Random())
    raise RoutingError(f"unknown path policy {policy!r}")


def terminal_frame_type(terminal: str) -> FrameType:
    if terminal.startswith(SERVER_TERMINAL):
        return FrameType.SEND
    if terminal.startswith(CLIENT_TERMINAL):
        return FrameType.DELIVER
    raise RoutingError(f"terminal {terminal!r} has no known kind")


def wrap_for_relay(path: RelayPath, terminal: str, envelope: bytes,
                   ttl: int | None = None) -> Frame:
    """Build the RELAY frame that will walk `path` and end at `terminal`."""
    header = RelayHeader(
        ttl=ttl if ttl is not None else path.k + 2,
        remaining_path=path.hops,
        terminal=terminal,
    )
    return make_frame(RelayPayload(relay_header=header, envelope=envelope))


@dataclass(frozen=True)
class SendTo:
    dest: str
    frame: Frame


@dataclass(frozen=True)
class Drop:
    reason: str


ForwardAction = SendTo | Drop


class RelayNode:
    """Forwarding-only daemon: pops itself off the path, re-emits, never decrypts."""

    def __init__(self, node_id: str, endpoints: dict[str, str] | None = None) -> None:
        self.node_id = node_id
        # node id -> endpoint for next hops; terminals pass through as-is
        self.endpoints = dict(endpoints or {})

    def _endpoint(self, node_id: str) -> str:
        return self.endpoints.get(node_id, node_id)

    def forward(self, payload: RelayPayload) -> ForwardAction:
        header = payload.relay_header
        if not header.remaining_path or header.remaining_path[0] != self.node_id:
            return Drop("not-next-hop")
        if header.ttl == 0:
            return Drop("ttl-expired")
        remaining = header.remaining_path[1:]
        ttl = header.ttl - 1
        if not remaining:
            kind = terminal_frame_type(header.terminal)
            if kind == FrameType.SEND:
                return SendTo(header.terminal, make_frame(SendPayload(payload.envelope)))
            return SendTo(header.terminal, make_frame(DeliverPayload(payload.envelope)))
        if ttl == 0:
            return Drop("ttl-expired")
        rewritten = RelayPayload(
            relay_header=RelayHeader(ttl=ttl, remaining_path=remaining, terminal=header.terminal),
            envelope=payload.envelope,
        )
        return SendTo(self._endpoint(remaining[0]), make_frame(rewritten))

    def handle_frame(self, origin: str, frame: Frame) -> Effects:
        if frame.frame_type != FrameType.RELAY:
            event_log(self.node_id, "drop", reason="non-relay-frame", frame_type=frame.frame_type.name)
            return []
        try:
            payload = parse_frame(frame)
        except WireError as exc:
            event_log(self.node_id, "drop", reason="malformed-payload", detail=exc)
            return []
        action = self.forward(payload)
        if isinstance(action, Drop):
            event_log(self.node_id, "drop", reason=action.reason)
            return []
        event_log(self.node_id, "forward", next=action.dest)
        return [(action.dest, action.frame)]


class EntryNode:
    """Agency ingress: balances client SEND frames onto relay paths, filters the rest."""

    def __init__(
        self,
        node_id: str,
        agency: str,
        registry: NodeRegistry,
        hop_count: int = 3,
        path_policy: str = "round_robin",
        rng: Random | None = None,
    ) -> None:
        self.node_id = node_id
        self.agency = agency
        self.registry = registry
        self.hop_count = hop_count
        self.path_policy = path_policy
        self.rng = rng
        self.server_terminal = SERVER_TERMINAL + agency
        self._relay = RelayNode(node_id)

    def handle_frame(self, origin: str, frame: Frame) -> Effects:
        if frame.frame_type == FrameType.SEND:
            return self._ingress(frame)
        if frame.frame_type == FrameType.RELAY:
            return self._route_relay(origin, frame)
        # firewall: nothing else crosses a client-facing socket
        event_log(self.node_id, "drop", reason="firewalled-frame-type",
                  frame_type=frame.frame_type.name)
        return []

    def _ingress(self, frame: Frame) -> Effects:
        try:
            payload = parse_frame(frame)
        except WireError as exc:
            event_log(self.node_id, "drop", reason="malformed-payload", detail=exc)
            return []
        assert isinstance(payload, SendPayload)
        try:
            k = min(self.hop_count, max(1, len(self.registry)))
            path = choose_path(self.registry, k, self.path_policy, self.rng)
        except EmptyRegistry:
            event_log(self.node_id, "drop", reason="no-relays")
            return []
        relay_frame = wrap_for_relay(path, self.server_terminal, payload.envelope)
        first = self.registry.endpoint_of(path.hops[0])
        event_log(self.node_id, "forward", next=first, hops=len(path.hops))
        return [(first, relay_frame)]

    def _route_relay(self, origin: str, frame: Frame) -> Effects:
        try:
            payload = parse_frame(frame)
        except WireError as exc:
            event_log(self.node_id, "drop", reason="malformed-payload", detail=exc)
            return []
        assert isinstance(payload, RelayPayload)
        head = payload.relay_header.remaining_path[0] if payload.relay_header.remaining_path else None
        if head == self.node_id:
            return self._relay.handle_frame(origin, frame)
        if head is None:
            event_log(self.node_id, "drop", reason="empty-path")
            return []
        try:
            dest = self.registry.endpoint_of(head)
        except RoutingError:
            event_log(self.node_id, "drop", reason="unknown-hop", hop=head)
            return []
        event_log(self.node_id, "forward", next=dest)
        return [(dest, frame)]
