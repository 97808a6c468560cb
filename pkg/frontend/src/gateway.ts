/**
 * Persistent gateway connection: one websocket carrying JSON frames both
 * ways, with automatic reconnect on an increasing backoff schedule. The
 * socket constructor is injectable so tests can substitute a fake and the
 * same class runs in browsers and under node's ws package.
 */

import { ClientMessage, ServerMessage, parseServerMessage } from "./protocol.js";

const CONFIG = {
  BACKOFF_MS: [500, 1000, 2000, 5000, 10000],
};

/** The subset of the WHATWG WebSocket surface the link relies on. */
export interface SocketLike {
  onopen: ((ev?: unknown) => void) | null;
  onmessage: ((ev: { data: unknown }) => void) | null;
  onclose: ((ev?: unknown) => void) | null;
  onerror: ((ev?: unknown) => void) | null;
  send(data: string): void;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export type LinkStatus = "connecting" | "open" | "retrying" | "closed";

export interface LinkEvents {
  /** Connection is up; the session starts from scratch (server state is per-connection). */
  onOpen(): void;
  onMessage(msg: ServerMessage): void;
  /** status "retrying" carries the delay before the next attempt. */
  onStatus(status: LinkStatus, retryInMs: number | null): void;
}

export class GatewayLink {
  private socket: SocketLike | null = null;
  private attempt = 0;
  private stopped = false;
  private retryTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(
    private url: string,
    private events: LinkEvents,
    private factory: SocketFactory = (u) => new WebSocket(u) as unknown as SocketLike,
  ) {}

  get connected(): boolean {
    return this.socket !== null;
  }

  connect(): void {
    this.stopped = false;
    this.open();
  }

  close(): void {
    this.stopped = true;
    if (this.retryTimer !== null) {
      clearTimeout(this.retryTimer);
      this.retryTimer = null;
    }
    const socket = this.socket;
    this.socket = null;
    if (socket !== null) {
      socket.onclose = null;
      socket.close();
    }
    this.events.onStatus("closed", null);
  }

  /** Drop the current socket and dial again; the server session dies with it. */
  reset(): void {
    const socket = this.socket;
    this.socket = null;
    if (socket !== null) {
      socket.onclose = null;
      socket.close();
    }
    if (!this.stopped) this.open();
  }

  /** True if the frame left on a live socket; false means not connected. */
  send(msg: ClientMessage): boolean {
    if (this.socket === null) return false;
    try {
      this.socket.send(JSON.stringify(msg));
      return true;
    } catch {
      return false;
    }
  }

  private open(): void {
    this.events.onStatus("connecting", null);
    let socket: SocketLike;
    try {
      socket = this.factory(this.url);
    } catch {
      this.scheduleRetry();
      return;
    }
    socket.onopen = () => {
      this.socket = socket;
      this.attempt = 0;
      this.events.onStatus("open", null);
      this.events.onOpen();
    };
    socket.onmessage = (ev) => {
      let msg: ServerMessage;
      try {
        msg = parseServerMessage(String(ev.data));
      } catch {
        return; // not a gateway frame; drop rather than wedge the session
      }
      this.events.onMessage(msg);
    };
    socket.onerror = () => {
      // the close handler owns recovery; errors always precede a close
    };
    socket.onclose = () => {
      this.socket = null;
      if (!this.stopped) this.scheduleRetry();
    };
  }

  private scheduleRetry(): void {
    const delay = CONFIG.BACKOFF_MS[Math.min(this.attempt, CONFIG.BACKOFF_MS.length - 1)]!;
    this.attempt += 1;
    this.events.onStatus("retrying", delay);
    this.retryTimer = setTimeout(() => {
      this.retryTimer = null;
      if (!this.stopped) this.open();
    }, delay);
  }
}
