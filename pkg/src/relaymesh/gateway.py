"""Browser gateway: the frame protocol as JSON over a websocket at /gateway.

Each JSON message maps 1:1 to a typed payload (field names preserved, binary
fields base64, frame type as the "type" discriminator). Gateway connections
are labeled ws:N and plug into the hosting TcpDaemon's effect routing, so a
browser session is just another connection as far as the server core is
concerned: DELIVER pushes, ACKs, and ERRORs flow back over the socket.
"""

from __future__ import annotations

import json
import logging
import threading
from itertools import count

from websockets.sync.server import Server, ServerConnection, serve

from .jsonmap import frame_to_json, json_to_frame
from .transport import TcpDaemon
from .wire import ErrorCode, ErrorPayload, Frame, WireError, make_frame

logger = logging.getLogger("relaymesh.gateway")

GATEWAY_PATH = "/gateway"


class Gateway:
    """Websocket front door bridging JSON messages into a TcpDaemon's machine."""

    def __init__(self, daemon: TcpDaemon, host: str = "127.0.0.1", port: int = 0) -> None:
        self.daemon = daemon
        self._conns: dict[str, ServerConnection] = {}
        self._lock = threading.Lock()
        self._ids = count(1)
        self._server: Server = serve(self._handler, host, port)
        self.host, self.port = self._server.socket.getsockname()[:2]
        self._thread = threading.Thread(
            target=self._server.serve_forever, name="gateway", daemon=True
        )
        daemon.alt_sender = self._send_ws

    @property
    def url(self) -> str:
        return f"ws://{self.host}:{self.port}{GATEWAY_PATH}"

    def start(self) -> "Gateway":
        self._thread.start()
        return self

    def stop(self) -> None:
        self._server.shutdown()

    # -- connection handling -------------------------------------------------------

    def _handler(self, ws: ServerConnection) -> None:
        if ws.request is None or ws.request.path.split("?", 1)[0] != GATEWAY_PATH:
            ws.close(1008, "unknown path")
            return
        label = f"ws:{next(self._ids)}"
        with self._lock:
            self._conns[label] = ws
        logger.info("gateway session %s open", label)
        try:
            for message in ws:
                self._on_message(label, ws, message)
        except Exception as exc:
            logger.info("gateway session %s errored: %s", label, exc)
        finally:
            with self._lock:
                self._conns.pop(label, None)
            self.daemon.notify_disconnect(label)
            logger.info("gateway session %s closed", label)

    def _on_message(self, label: str, ws: ServerConnection, message: str | bytes) -> None:
        try:
            if isinstance(message, bytes):
                message = message.decode("utf-8")
            frame = json_to_frame(json.loads(message))
        except (ValueError, KeyError, TypeError, WireError) as exc:
            reply = make_frame(ErrorPayload(int(ErrorCode.MALFORMED_PAYLOAD), str(exc)))
            ws.send(json.dumps(frame_to_json(reply)))
            return
        self.daemon.dispatch(label, frame)

    def _send_ws(self, dest: str, frame: Frame) -> bool:
        """alt_sender hook: handle ws:* destinations, pass everything else back."""
        if not dest.startswith("ws:"):
            return False
        with self._lock:
            ws = self._conns.get(dest)
        if ws is None:
            logger.info("gateway session %s gone, dropping %s", dest, frame.frame_type.name)
            return True
        try:
            ws.send(json.dumps(frame_to_json(frame)))
        except Exception as exc:
            logger.info("gateway send to %s failed: %s", dest, exc)
        return True
