"""Deterministic in-process network simulation.

Every daemon (servers, entry nodes, relays, clients) runs as a sans-io state
machine over an in-memory transport: one FIFO per directed link, a logical
clock, and a single seeded RNG that drives scheduling ties, key generation,
nonces, and salts. Identical (seed, scenario) pairs therefore produce
byte-identical traces, which is what the acceptance oracles assert over.
"""

from __future__ import annotations

import string
from collections import deque
from dataclasses import dataclass, field
from random import Random
from typing import Protocol

from .client import ClientCore, ErrorEvent, Event, MessageEvent
from .config import PeerEntry, ServerConfig
from .envelope import (
    LetterSealer,
    PlaintextLetter,
    SealedEnvelope,
    generate_keypair,
    letter_from_bytes,
    letter_to_bytes,
)
from .routing import EntryNode, NodeRegistry, RelayNode, event_log
from .server import AgencyServer
from .wire import Frame, encode_frame

BODY_ALPHABET = string.ascii_letters + string.digits + "+/"
DEFAULT_STEP_BUDGET = 500_000


class SimError(Exception):
    pass


class InvalidTopology(SimError):
    pass


class Deadlock(SimError):
    """The scheduler exceeded its step budget with frames still in flight."""


@dataclass(frozen=True)
class ObservedFrame:
    step: int
    link: tuple[str, str]
    data: bytes


class FrameHandler(Protocol):
    def handle_frame(self, origin: str, frame: Frame) -> list[tuple[str, Frame]]: ...


class TransparentSealer(LetterSealer):
    """Negative control: a 'sealed' envelope that is just the letter bytes.

    Exists so the confidentiality oracle can prove it catches a broken build.
    """

    def seal(self, letter, recipient_pub, rng=None) -> SealedEnvelope:
        return SealedEnvelope(b"", b"", letter_to_bytes(letter), b"")

    def open(self, env, private_key) -> PlaintextLetter:
        return letter_from_bytes(env.ciphertext)


def email_of(user: str, agency: str) -> str:
    return f"{user}@{agency.lower()}-mail.example"


def password_of(user: str) -> str:
    return f"pw-{user}-secret"


class SimClient:
    """A simulated device: wraps ClientCore and accumulates its UI events."""

    def __init__(self, endpoint: str, core: ClientCore, user: str, agency: str) -> None:
        self.endpoint = endpoint
        self.core = core
        self.user = user
        self.agency = agency
        self.events: list[Event] = []
        self.messages: list[PlaintextLetter] = []
        self.errors: list[ErrorEvent] = []

    def handle_frame(self, origin: str, frame: Frame) -> list[tuple[str, Frame]]:
        for event in self.core.handle_frame(origin, frame):
            self.events.append(event)
            if isinstance(event, MessageEvent):
                self.messages.append(event.letter)
            elif isinstance(event, ErrorEvent):
                self.errors.append(event)
        return []


class SimNetwork:
    """Logical-time event network; run() drains links to quiescence."""

    def __init__(self, seed: int) -> None:
        self.seed = seed
        self.rng = Random(seed)
        self.step = 0
        self.links: dict[tuple[str, str], deque[Frame]] = {}
        self.handlers: dict[str, FrameHandler] = {}
        self.trace: list[ObservedFrame] = []
        self.drops: list[tuple[int, tuple[str, str], str]] = []
        self._drop_next: set[tuple[str, str]] = set()
        self.servers: dict[str, AgencyServer] = {}
        self.entries: dict[str, EntryNode] = {}
        self.relays: dict[str, RelayNode] = {}
        self.registries: dict[str, NodeRegistry] = {}
        self.clients: dict[str, SimClient] = {}

    def clock(self) -> int:
        return self.step

    # -- transport ---------------------------------------------------------------

    def send(self, src: str, dst: str, frame: Frame) -> None:
        data = encode_frame(frame)
        self.trace.append(ObservedFrame(self.step, (src, dst), data))
        if (src, dst) in self._drop_next:
            self._drop_next.discard((src, dst))
            self.drops.append((self.step, (src, dst), "injected-drop"))
            return
        self.links.setdefault((src, dst), deque()).append(frame)

    def submit(self, src: str, effects: list[tuple[str, Frame]]) -> None:
        for dst, frame in effects:
            self.send(src, dst, frame)

    def run(self, max_steps: int = DEFAULT_STEP_BUDGET) -> None:
        """Dispatch frames until no link holds one (quiescence)."""
        budget = max_steps
        while True:
            nonempty = sorted(link for link, q in self.links.items() if q)
            if not nonempty:
                return
            if budget <= 0:
                raise Deadlock(f"step budget exhausted with {len(nonempty)} busy links")
            budget -= 1
            link = self.rng.choice(nonempty)
            frame = self.links[link].popleft()
            self.step += 1
            src, dst = link
            handler = self.handlers.get(dst)
            if handler is None:
                self.drops.append((self.step, link, "dead-endpoint"))
                event_log(dst, "drop", reason="dead-endpoint")
                continue
            self.submit(dst, handler.handle_frame(src, frame))

    # -- faults --------------------------------------------------------------------

    def kill_relay(self, node_id: str) -> None:
        relay = self.relays.pop(node_id, None)
        if relay is None:
            raise SimError(f"no relay {node_id!r}")
        self.handlers.pop(node_id, None)
        for registry in self.registries.values():
            if node_id in registry.node_ids():
                registry.remove(node_id)

    def drop_next_frame(self, src: str, dst: str) -> None:
        self._drop_next.add((src, dst))

    # -- convenience -----------------------------------------------------------------

    def client(self, address: str) -> SimClient:
        return self.clients[address]

    def audit_total(self) -> int:
        return sum(len(s.audit) for s in self.servers.values())


def spawn_topology(
    agencies: int = 2,
    relays_per_agency: int = 3,
    clients_per_agency: int = 2,
    seed: int = 0,
    no_seal: bool = False,
) -> SimNetwork:
    """Build servers, entry nodes, relay sets, and registered clients.

    Keys, salts, and tokens derive from the seed, so two spawns with the same
    arguments are indistinguishable on the wire.
    """
    if agencies < 1 or agencies > len(string.ascii_uppercase):
        raise InvalidTopology(f"agencies={agencies} out of range")
    if relays_per_agency < 1:
        raise InvalidTopology("need at least one relay per agency")
    if clients_per_agency < 1:
        raise InvalidTopology("need at least one client per agency")

    net = SimNetwork(seed)
    names = [string.ascii_uppercase[i] for i in range(agencies)]
    sealer = TransparentSealer() if no_seal else LetterSealer()
    server_keys = {
        a: generate_keypair(f"{seed}:server:{a}".encode()) for a in names
    }

    for a in names:
        registry = NodeRegistry()
        relay_ids = [f"{a}.r{i}" for i in range(1, relays_per_agency + 1)]
        for node_id in relay_ids:
            registry.add(node_id, node_id)
            relay = RelayNode(node_id)
            net.relays[node_id] = relay
            net.handlers[node_id] = relay
        config = ServerConfig(
            agency=a,
            peers={
                b: PeerEntry(endpoint=f"server:{b}", pubkey=server_keys[b].public)
                for b in names
                if b != a
            },
            hop_count=min(3, relays_per_agency),
            scrypt_n=16,
            scrypt_r=8,
            scrypt_p=1,
            deliver_via_relays=True,
        )
        server = AgencyServer(
            config,
            server_keys[a],
            registry=registry,
            rng=net.rng,
            clock=net.clock,
            sealer=sealer,
        )
        entry = EntryNode(f"entry:{a}", a, registry, hop_count=config.hop_count,
                          rng=net.rng)
        net.registries[a] = registry
        net.servers[a] = server
        net.entries[a] = entry
        net.handlers[f"server:{a}"] = server
        net.handlers[f"entry:{a}"] = entry

        for i in range(1, clients_per_agency + 1):
            user = f"{a.lower()}{i}"
            address = f"{user}@{a}"
            endpoint = f"client:{address}"
            core = ClientCore(
                keypair=generate_keypair(f"{seed}:client:{address}".encode()),
                server_dest=f"server:{a}",
                entry_dest=f"entry:{a}",
                rng=net.rng,
                clock=net.clock,
                sealer=sealer,
            )
            client = SimClient(endpoint, core, user, a)
            net.clients[address] = client
            net.handlers[endpoint] = client

    # pin keys and register every client before the scenario starts
    for address, client in net.clients.items():
        net.submit(client.endpoint, client.core.hello())
    net.run()
    for address, client in net.clients.items():
        net.submit(
            client.endpoint,
            client.core.register(client.user, email_of(client.user, client.agency),
                                 password_of(client.user)),
        )
    net.run()
    return net


# -- scenarios ----------------------------------------------------------------------


@dataclass(frozen=True)
class ScenarioStep:
    step: int
    actor: str
    action: str
    args: tuple[str, ...]


@dataclass(frozen=True)
class Scenario:
    steps: tuple[ScenarioStep, ...]

    def to_text(self) -> str:
        lines = []
        for s in self.steps:
            lines.append(" ".join((str(s.step), s.actor, s.action, *s.args)).rstrip())
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Scenario":
        steps = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split(" ", 3)
            if len(parts) < 3:
                raise SimError(f"line {lineno}: expected `step actor action [args]`")
            step, actor, action = int(parts[0]), parts[1], parts[2]
            rest = parts[3] if len(parts) > 3 else ""
            if action == "send":
                if not rest:
                    raise SimError(f"line {lineno}: send needs a recipient")
                # body is everything after the recipient, may be empty
                buddy, _, body = rest.partition(" ")
                args: tuple[str, ...] = (buddy, body)
            else:
                args = tuple(rest.split())
            steps.append(ScenarioStep(step, actor, action, args))
        steps.sort(key=lambda s: s.step)
        return cls(tuple(steps))


@dataclass
class ScenarioResult:
    net: SimNetwork
    sent: list[PlaintextLetter] = field(default_factory=list)
    plaintexts: list[str] = field(default_factory=list)

    @property
    def trace(self) -> list[ObservedFrame]:
        return self.net.trace

    def deliveries(self) -> dict[str, list[PlaintextLetter]]:
        return {addr: list(c.messages) for addr, c in self.net.clients.items()}

    def delivered_letters(self) -> list[PlaintextLetter]:
        out: list[PlaintextLetter] = []
        for client in self.net.clients.values():
            out.extend(client.messages)
        return out


def run_scenario(net: SimNetwork, scenario: Scenario,
                 max_steps: int = DEFAULT_STEP_BUDGET) -> ScenarioResult:
    """Apply scripted client actions in step order, running to quiescence between."""
    result = ScenarioResult(net)
    for step in scenario.steps:
        client = net.clients.get(step.actor)
        if client is None:
            raise SimError(f"unknown actor {step.actor!r}")
        core = client.core
        if step.action == "login":
            effects = core.login(client.user, password_of(client.user))
        elif step.action == "add":
            (email,) = step.args
            effects = core.add_buddy(email)
        elif step.action == "send":
            buddy, body = step.args[0], step.args[1] if len(step.args) > 1 else ""
            effects = core.send_message(buddy, body)
            result.sent.append(core.outbox[-1])
            result.plaintexts.append(body)
        else:
            raise SimError(f"unknown action {step.action!r}")
        net.submit(client.endpoint, effects)
        net.run(max_steps)
    return result


def assert_confidentiality(trace: list[ObservedFrame],
                           plaintexts: list[str]) -> list[tuple[int, tuple[str, str], str]]:
    """Return every (step, link, body) where a plaintext body leaked into a frame."""
    violations = []
    needles = [(p, p.encode("utf-8")) for p in plaintexts if p]
    for observed in trace:
        for body, needle in needles:
            if needle in observed.data:
                violations.append((observed.step, observed.link, body))
    return violations


def random_scenario(net: SimNetwork, rng: Random,
                    min_messages: int = 10, max_messages: int = 50) -> Scenario:
    """Uniform mix of the four agency flows with random 32-char bodies.

    All clients log in first, each sender adds its recipient before sending,
    and bodies are drawn from a 64-symbol alphabet so substring scans on the
    trace are meaningful.
    """
    agencies = sorted(net.servers)
    if len(agencies) < 2:
        raise SimError("random scenarios need two agencies")
    by_agency: dict[str, list[str]] = {}
    for address, client in net.clients.items():
        by_agency.setdefault(client.agency, []).append(address)
    for members in by_agency.values():
        members.sort()

    steps: list[ScenarioStep] = []
    counter = 0
    for address in sorted(net.clients):
        counter += 1
        steps.append(ScenarioStep(counter, address, "login", ()))

    flows = [(a, b) for a in agencies[:2] for b in agencies[:2]]
    added: set[tuple[str, str]] = set()
    n_messages = rng.randint(min_messages, max_messages)
    for _ in range(n_messages):
        src, dst = flows[rng.randrange(4)]
        sender = rng.choice(by_agency[src])
        recipient = rng.choice(by_agency[dst])
        if recipient == sender and len(by_agency[dst]) > 1:
            others = [c for c in by_agency[dst] if c != sender]
            recipient = rng.choice(others)
        if (sender, recipient) not in added:
            added.add((sender, recipient))
            counter += 1
            rcpt_client = net.clients[recipient]
            steps.append(ScenarioStep(
                counter, sender, "add",
                (email_of(rcpt_client.user, rcpt_client.agency),),
            ))
        body = "".join(rng.choice(BODY_ALPHABET) for _ in range(32))
        counter += 1
        steps.append(ScenarioStep(counter, sender, "send", (recipient, body)))
    return Scenario(tuple(steps))


def audit_expectation(result: ScenarioResult) -> tuple[int, int]:
    """(expected, actual) audit record totals for a fault-free scenario.

    Every delivered letter is audited once per server it traversed: once for
    intra-agency, twice for inter-agency. Rejected sends contribute nothing.
    """
    expected = 0
    for letter in result.delivered_letters():
        sender_agency = letter.sender.rsplit("@", 1)[1]
        recipient_agency = letter.recipient.rsplit("@", 1)[1]
        expected += 1 if sender_agency == recipient_agency else 2
    return expected, result.net.audit_total()


def format_trace(trace: list[ObservedFrame]) -> str:
    """Newline-delimited `step src->dst hex` lines."""
    return "\n".join(
        f"{o.step} {o.link[0]}->{o.link[1]} {o.data.hex()}" for o in trace
    ) + ("\n" if trace else "")
