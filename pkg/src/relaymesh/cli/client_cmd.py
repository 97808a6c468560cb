"""Interactive chat client.

Startup shows the logo, connects, pins the server key, then offers the
login-or-register prompt. Incoming messages print asynchronously while the
command loop reads stdin. Exit codes: 0 normal, 2 authentication failure,
3 connection failure.
"""

from __future__ import annotations

import argparse
import getpass
import queue
import sys
import threading
import time
from datetime import datetime, timezone
from pathlib import Path

from ..client import (
    BuddyAddedEvent,
    ClientCore,
    ClientError,
    ErrorEvent,
    LoginOkEvent,
    MessageEvent,
    RegisteredEvent,
    RosterEvent,
    SendAckEvent,
    ServerKeyEvent,
    TamperEvent,
)
from ..envelope import fingerprint, generate_keypair, load_keystore, save_keystore
from ..transport import ClientChannel

BANNER = r"""
  ___     _           __  __        _
 | _ \___| |__ _ _  _|  \/  |___ __| |_
 |   / -_) / _` | || | |\/| / -_|_-< ' \
 |_|_\___|_\__,_|\_, |_|  |_\___/__/_||_|
                 |__/  sealed relay messaging
"""

HELP = """commands:
  register            create an account (prompts for details)
  login               authenticate (prompts for credentials)
  buddies             show the buddy list with presence
  add <email>         add a buddy by their registered email
  send <buddy> <text> send a message to a buddy address
  quit                leave
"""


class _Session:
    """Shared state between the stdin loop and the event printer."""

    def __init__(self) -> None:
        self.auth_failed = False
        self.logged_in = threading.Event()
        self.connection_lost = threading.Event()
        self.ready = queue.Queue()


def _prompt(label: str, secret: bool = False) -> str:
    if secret and sys.stdin.isatty():
        return getpass.getpass(label)
    print(label, end="", flush=True)
    line = sys.stdin.readline()
    if not line:
        raise EOFError
    return line.rstrip("\n")


def _ts(ms: int) -> str:
    return datetime.fromtimestamp(ms / 1000, tz=timezone.utc).strftime("%H:%M:%S")


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="client", description="Interactive chat client.")
    ap.add_argument("--server", required=True, help="agency server host:port")
    ap.add_argument("--entry", help="agency entry node host:port for outgoing messages "
                                    "(defaults to sending via the server connection)")
    ap.add_argument("--keystore", required=True, help="path to this device's key file")
    args = ap.parse_args(argv)

    print(BANNER)
    session = _Session()
    keystore = Path(args.keystore)
    core = ClientCore(server_dest="server",
                      entry_dest="entry" if args.entry else None)
    if keystore.exists():
        core.keypair = load_keystore(keystore)
    pin_path = keystore.with_suffix(keystore.suffix + ".pin")
    if pin_path.exists():
        core.pinned_key = bytes.fromhex(pin_path.read_text().strip())

    events: queue.Queue = queue.Queue()

    def on_frame(label: str, frame) -> None:
        for event in core.handle_frame(label, frame):
            events.put(event)

    def on_close(label: str) -> None:
        session.connection_lost.set()
        print("\nconnection lost; restart the client to reconnect")

    try:
        server_chan = ClientChannel(args.server, on_frame, "server", on_close)
        entry_chan = ClientChannel(args.entry, on_frame, "entry") if args.entry else None
    except OSError as exc:
        print(f"cannot connect: {exc}")
        return 3

    channels = {"server": server_chan, "entry": entry_chan or server_chan}

    def emit(effects) -> None:
        for dest, frame in effects:
            channels[dest].send(frame)

    def printer() -> None:
        while True:
            event = events.get()
            if event is None:
                return
            if isinstance(event, MessageEvent):
                letter = event.letter
                print(f"\n[{_ts(letter.sent_at)}] {letter.sender}: {letter.body}")
            elif isinstance(event, ErrorEvent):
                print(f"\nerror({event.code}): {event.message}")
                if event.request in ("login", "register"):
                    session.auth_failed = True
                    session.ready.put(False)
            elif isinstance(event, LoginOkEvent):
                session.auth_failed = False
                session.logged_in.set()
                print("\nlogged in; fetching buddy list")
                emit(core.request_roster())
                session.ready.put(True)
            elif isinstance(event, RegisteredEvent):
                print("\nregistered; use `login` to start a session")
                session.ready.put(True)
            elif isinstance(event, RosterEvent):
                if not event.entries:
                    print("buddy list is empty; use `add <email>`")
                for entry in event.entries:
                    state = "online" if entry.online else "offline"
                    print(f"  {entry.address} [{state}]")
            elif isinstance(event, BuddyAddedEvent):
                print(f"\nadded {event.address}")
            elif isinstance(event, SendAckEvent):
                print("(accepted by server)")
            elif isinstance(event, TamperEvent):
                print(f"\nwarning: discarded undecryptable message ({event.detail})")
            elif isinstance(event, ServerKeyEvent):
                pass  # handled during startup

    emit(core.hello())
    deadline = time.time() + 10
    key_event: ServerKeyEvent | None = None
    while time.time() < deadline:
        try:
            event = events.get(timeout=deadline - time.time())
        except queue.Empty:
            break
        if isinstance(event, ServerKeyEvent):
            key_event = event
            break
    if key_event is None:
        print("server did not identify itself; giving up")
        return 3
    if not key_event.pinned_ok:
        print("SERVER KEY CHANGED since it was pinned. Refusing to continue.")
        print(f"pinned   {fingerprint(core.pinned_key or b'')}")
        print(f"received {fingerprint(key_event.pubkey)}")
        return 2
    pin_path.parent.mkdir(parents=True, exist_ok=True)
    pin_path.write_text(key_event.pubkey.hex() + "\n")
    print(f"connected to {core.server_address} "
          f"(key fingerprint {fingerprint(key_event.pubkey)})")
    print("login or register?")

    threading.Thread(target=printer, daemon=True).start()

    def do_register() -> None:
        user = _prompt("username: ")
        email = _prompt("email: ")
        password = _prompt("password: ", secret=True)
        if not keystore.exists():
            core.keypair = generate_keypair()
            save_keystore(keystore, core.keypair)
            print(f"new keystore written to {keystore}")
        emit(core.register(user, email, password))
        session.ready.get()

    def do_login() -> None:
        user = _prompt("username: ")
        password = _prompt("password: ", secret=True)
        emit(core.login(user, password))
        session.ready.get()

    try:
        while not session.connection_lost.is_set():
            try:
                line = input("> ")
            except EOFError:
                break
            parts = line.strip().split(" ", 2)
            cmd = parts[0] if parts and parts[0] else ""
            try:
                if cmd == "":
                    continue
                elif cmd == "quit":
                    break
                elif cmd == "help":
                    print(HELP)
                elif cmd == "register":
                    do_register()
                elif cmd == "login":
                    do_login()
                elif cmd == "buddies":
                    emit(core.request_roster())
                    time.sleep(0.2)
                elif cmd == "add":
                    if len(parts) < 2:
                        print("usage: add <email>")
                        continue
                    emit(core.add_buddy(parts[1]))
                    time.sleep(0.2)
                elif cmd == "send":
                    if len(parts) < 2:
                        print("usage: send <buddy> <text>")
                        continue
                    body = parts[2] if len(parts) > 2 else ""
                    emit(core.send_message(parts[1], body))
                else:
                    print(f"unknown command {cmd!r}; try `help`")
            except ClientError as exc:
                print(f"error: {exc}")
            except EOFError:
                break
    except KeyboardInterrupt:
        pass
    finally:
        events.put(None)
        server_chan.close()
        if entry_chan is not None:
            entry_chan.close()

    if session.connection_lost.is_set():
        return 3
    if session.auth_failed and not session.logged_in.is_set():
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
