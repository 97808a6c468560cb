"""Threaded TCP transport for the frame protocol.

TcpDaemon hosts any sans-io state machine (server, relay, entry) behind a
listening socket: inbound connections get `conn:N` origin labels, outbound
connections made to satisfy effects keep the destination string as their
label, so replies arriving on a dialed link correlate with what was asked on
it. One lock serializes handle_frame calls; socket writes never happen while
it is held by another connection's reader.
"""

from __future__ import annotations

import logging
import socket
import threading
from itertools import count
from typing import Callable

from .wire import Frame, FrameDecoder, WireError, encode_frame

logger = logging.getLogger("relaymesh.transport")

RECV_CHUNK = 65536


def _shutdown_close(sock: socket.socket) -> None:
    # shutdown before close: close() alone leaves a reader blocked in recv()
    # holding the fd open, so the peer never sees a FIN
    try:
        sock.shutdown(socket.SHUT_RDWR)
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


class TransportError(Exception):
    pass


def parse_hostport(value: str) -> tuple[str, int]:
    host, sep, port = value.rpartition(":")
    if not sep or not port.isdigit():
        raise TransportError(f"expected host:port, got {value!r}")
    return host or "127.0.0.1", int(port)


def looks_like_hostport(value: str) -> bool:
    host, sep, port = value.rpartition(":")
    return bool(sep) and bool(host) and port.isdigit()


class TcpDaemon:
    """Runs one state machine behind a listening TCP socket."""

    def __init__(
        self,
        host: str,
        port: int,
        machine,
        resolve: Callable[[str], str | None] | None = None,
        name: str = "daemon",
    ) -> None:
        self.machine = machine
        self.resolve = resolve or (lambda dest: None)
        self.name = name
        self._listener = socket.create_server((host, port))
        self.host, self.port = self._listener.getsockname()[:2]
        self._lock = threading.RLock()
        self._socks: dict[str, socket.socket] = {}
        self._write_locks: dict[str, threading.Lock] = {}
        self._conn_ids = count(1)
        self._closing = False
        # hook for alternate delivery backends (the browser gateway): return
        # True when the destination was handled
        self.alt_sender: Callable[[str, Frame], bool] | None = None
        self._accept_thread = threading.Thread(
            target=self._accept_loop, name=f"{name}-accept", daemon=True
        )

    def start(self) -> "TcpDaemon":
        self._accept_thread.start()
        return self

    def stop(self) -> None:
        self._closing = True
        try:
            self._listener.close()
        except OSError:
            pass
        with self._lock:
            socks = list(self._socks.values())
        for sock in socks:
            _shutdown_close(sock)

    # -- inbound -----------------------------------------------------------------

    def _accept_loop(self) -> None:
        while not self._closing:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return
            label = f"conn:{next(self._conn_ids)}"
            self._adopt(label, sock)

    def _adopt(self, label: str, sock: socket.socket) -> None:
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        with self._lock:
            self._socks[label] = sock
            self._write_locks[label] = threading.Lock()
        threading.Thread(
            target=self._reader, args=(label, sock),
            name=f"{self.name}-{label}", daemon=True,
        ).start()

    def _reader(self, label: str, sock: socket.socket) -> None:
        decoder = FrameDecoder()
        try:
            while True:
                data = sock.recv(RECV_CHUNK)
                if not data:
                    break
                for frame in decoder.feed(data):
                    self.dispatch(label, frame)
        except (OSError, WireError) as exc:
            if not self._closing:
                logger.info("%s: closing %s: %s", self.name, label, exc)
        finally:
            self._forget(label)

    def _forget(self, label: str) -> None:
        with self._lock:
            sock = self._socks.pop(label, None)
            self._write_locks.pop(label, None)
        if sock is not None:
            _shutdown_close(sock)
        self.notify_disconnect(label)

    def notify_disconnect(self, label: str) -> None:
        """Tell the machine a connection label is gone (serialized like dispatch)."""
        disconnect = getattr(self.machine, "disconnect", None)
        if disconnect is not None:
            with self._lock:
                disconnect(label)

    # -- dispatch and outbound ------------------------------------------------------

    def dispatch(self, origin: str, frame: Frame) -> None:
        """Run one inbound frame through the machine and route its effects."""
        with self._lock:
            effects = self.machine.handle_frame(origin, frame)
        for dest, out in effects:
            self.send_frame(dest, out)

    def send_frame(self, dest: str, frame: Frame) -> None:
        if self.alt_sender is not None and self.alt_sender(dest, frame):
            return
        with self._lock:
            sock = self._socks.get(dest)
        if sock is None:
            target = self.resolve(dest)
            if target is None and looks_like_hostport(dest):
                target = dest
            if target is None:
                logger.info("%s: no route to %r, dropping %s",
                            self.name, dest, frame.frame_type.name)
                return
            try:
                sock = self._dial(dest, target)
            except OSError as exc:
                logger.info("%s: dial %s (%s) failed: %s", self.name, dest, target, exc)
                return
        self._write(dest, sock, frame)

    def _dial(self, label: str, target: str) -> socket.socket:
        host, port = parse_hostport(target)
        sock = socket.create_connection((host, port), timeout=10)
        sock.settimeout(None)
        self._adopt(label, sock)
        return sock

    def _write(self, label: str, sock: socket.socket, frame: Frame) -> None:
        lock = self._write_locks.get(label) or threading.Lock()
        try:
            with lock:
                sock.sendall(encode_frame(frame))
        except OSError as exc:
            logger.info("%s: write to %s failed: %s", self.name, label, exc)
            self._forget(label)


class ClientChannel:
    """One client-side connection; frames are handed to a callback in order."""

    def __init__(
        self,
        target: str,
        on_frame: Callable[[str, Frame], None],
        label: str = "server",
        on_close: Callable[[str], None] | None = None,
    ) -> None:
        host, port = parse_hostport(target)
        self.label = label
        self._on_frame = on_frame
        self._on_close = on_close
        self._sock = socket.create_connection((host, port), timeout=10)
        self._sock.settimeout(None)
        self._sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self._write_lock = threading.Lock()
        self._closed = False
        threading.Thread(target=self._reader, name=f"channel-{label}", daemon=True).start()

    def send(self, frame: Frame) -> None:
        with self._write_lock:
            self._sock.sendall(encode_frame(frame))

    def send_effects(self, effects: list[tuple[str, Frame]]) -> None:
        for _, frame in effects:
            self.send(frame)

    def close(self) -> None:
        self._closed = True
        _shutdown_close(self._sock)

    def _reader(self) -> None:
        decoder = FrameDecoder()
        try:
            while True:
                data = self._sock.recv(RECV_CHUNK)
                if not data:
                    break
                for frame in decoder.feed(data):
                    self._on_frame(self.label, frame)
        except (OSError, WireError):
            pass
        finally:
            if not self._closed and self._on_close is not None:
                self._on_close(self.label)
