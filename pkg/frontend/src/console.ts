/**
 * Console state machine: login screen, buddy roster with presence and unread
 * badges, and per-buddy chat transcripts. Sans-DOM: the renderer reads this
 * state and calls these methods; the gateway link feeds frames in.
 *
 * Security posture: the private key stays in browser storage, message bodies
 * leave only inside sealed envelopes, and the server key is pinned on first
 * contact. A pin mismatch after reconnect blocks every authenticated action
 * until the operator explicitly trusts the new key.
 */

import { bytesEqual, fromBase64, toBase64 } from "./bytes.js";
import {
  EnvelopeError,
  KeyPair,
  PlaintextLetter,
  envelopeFromBytes,
  envelopeToBytes,
  fingerprint,
  openLetter,
  seal,
} from "./envelope.js";
import { Keystore } from "./keystore.js";
import {
  ClientMessage,
  ErrorCode,
  RosterEntry,
  SERVER_ALIAS,
  decodeRosterBlob,
  sealPassword,
  sendRef,
} from "./protocol.js";

const CONFIG = {
  SEND_ACK_TIMEOUT_MS: 5000,
  MAX_TOASTS: 4,
};

export type View =
  | { kind: "login" }
  | { kind: "roster" }
  | { kind: "chat"; buddy: string };

export type TranscriptRow =
  | { kind: "message"; author: string; body: string; sentAt: number }
  | { kind: "tamper"; detail: string }
  | { kind: "error"; detail: string };

export interface KeyMismatch {
  address: string;
  pinnedFingerprint: string;
  receivedFingerprint: string;
  receivedKey: Uint8Array;
}

/** What the console needs from the gateway link. */
export interface Transport {
  send(msg: ClientMessage): boolean;
  /** Drop the connection and dial again; ends the server-side session. */
  reset(): void;
}

type RequestKind = "register" | "login" | "roster" | "add";

interface PendingSend {
  buddy: string;
  timer: unknown;
}

export class ConsoleCore {
  // rendered state
  view: View = { kind: "login" };
  banner: string | null = null;
  connected = false;
  keyMismatch: KeyMismatch | null = null;
  toasts: string[] = [];
  user: string | null = null;
  serverAddress: string | null = null;
  roster = new Map<string, RosterEntry>();
  transcripts = new Map<string, TranscriptRow[]>();
  unread = new Map<string, number>();

  transport: Transport | null = null;
  onChange: (() => void) | null = null;

  private token: string | null = null;
  private keyPair: KeyPair | null = null;
  private pinnedKey: Uint8Array | null = null;
  private requests: RequestKind[] = [];
  private pendingSends = new Map<string, PendingSend>();
  private pendingLogin: { user: string; password: string } | null = null;
  private pipeline: Promise<void> = Promise.resolve();

  constructor(
    private keystore: Keystore,
    private gatewayUrl: string,
    private clock: () => number = () => Date.now(),
    private schedule: (fn: () => void, ms: number) => unknown = (fn, ms) => setTimeout(fn, ms),
    private cancel: (handle: unknown) => void = (handle) => clearTimeout(handle as number),
  ) {}

  // -- derived state ---------------------------------------------------------------

  get loggedIn(): boolean {
    return this.token !== null;
  }

  get agency(): string | null {
    if (this.serverAddress === null) return null;
    return this.serverAddress.slice(this.serverAddress.lastIndexOf("@") + 1);
  }

  get address(): string | null {
    if (this.user === null || this.agency === null) return null;
    return `${this.user}@${this.agency}`;
  }

  /** Roster entries plus anyone with a transcript, for the buddy pane. */
  buddies(): { address: string; online: boolean; unread: number }[] {
    const addresses = new Set([...this.roster.keys(), ...this.transcripts.keys()]);
    return [...addresses].sort().map((address) => ({
      address,
      online: this.roster.get(address)?.online ?? false,
      unread: this.unread.get(address) ?? 0,
    }));
  }

  transcript(buddy: string): TranscriptRow[] {
    return this.transcripts.get(buddy) ?? [];
  }

  // -- gateway link lifecycle --------------------------------------------------------

  /** A fresh connection is up; sessions are per-connection, so start clean. */
  onConnected(): void {
    this.connected = true;
    this.requests = [];
    for (const pending of this.pendingSends.values()) this.cancel(pending.timer);
    this.pendingSends.clear();
    if (this.token !== null) {
      this.token = null;
      this.banner = "connection restored; log in again";
    }
    this.view = { kind: "login" };
    this.transport?.send({ type: "PUBKEY_GET", address: SERVER_ALIAS });
    this.emit();
  }

  onDisconnected(retryInMs: number | null): void {
    this.connected = false;
    this.banner =
      retryInMs === null
        ? "connection lost"
        : `connection lost; retrying in ${(retryInMs / 1000).toFixed(1)}s`;
    this.emit();
  }

  onServerMessage(msg: import("./protocol.js").ServerMessage): void {
    // deliveries decrypt asynchronously; a serial pipeline keeps frame order
    this.pipeline = this.pipeline.then(() => this.dispatch(msg)).catch(() => undefined);
  }

  /** Resolves once every frame handed in so far has been applied. */
  settled(): Promise<void> {
    return this.pipeline;
  }

  private async dispatch(msg: import("./protocol.js").ServerMessage): Promise<void> {
    switch (msg.type) {
      case "PUBKEY_RESP":
        this.onServerKey(msg.address, fromBase64(msg.pubkey));
        break;
      case "ACK":
        this.onAck(msg.ref_id);
        break;
      case "ERROR":
        this.onError(msg.code, msg.message);
        break;
      case "DELIVER":
        await this.onDeliver(msg.envelope);
        break;
    }
    this.emit();
  }

  // -- key pinning -------------------------------------------------------------------

  private onServerKey(address: string, pubkey: Uint8Array): void {
    const pinned = this.keystore.loadPin(this.gatewayUrl);
    if (pinned !== null && !bytesEqual(pinned, pubkey)) {
      this.keyMismatch = {
        address,
        pinnedFingerprint: fingerprint(pinned),
        receivedFingerprint: fingerprint(pubkey),
        receivedKey: pubkey,
      };
      this.token = null;
      this.view = { kind: "login" };
      return;
    }
    this.keystore.savePin(this.gatewayUrl, pubkey);
    this.pinnedKey = pubkey;
    this.serverAddress = address;
  }

  /** Operator decision on the mismatch screen: accept and re-pin the new key. */
  trustNewKey(): void {
    if (this.keyMismatch === null) return;
    this.keystore.savePin(this.gatewayUrl, this.keyMismatch.receivedKey);
    this.pinnedKey = this.keyMismatch.receivedKey;
    this.serverAddress = this.keyMismatch.address;
    this.keyMismatch = null;
    this.banner = "server key re-pinned";
    this.emit();
  }

  // -- authentication ----------------------------------------------------------------

  private readyForAuth(): boolean {
    if (this.keyMismatch !== null) return false;
    if (!this.connected || this.pinnedKey === null) {
      this.banner = "not connected to the gateway yet";
      this.emit();
      return false;
    }
    return true;
  }

  async register(user: string, email: string, password: string): Promise<void> {
    if (!this.readyForAuth()) return;
    const keyPair = this.keystore.obtainKeyPair(user);
    const sealed = await sealPassword(password, this.pinnedKey!);
    this.user = user;
    this.keyPair = keyPair;
    this.pendingLogin = { user, password };
    this.requests.push("register");
    this.transport?.send({
      type: "REGISTER",
      user,
      email,
      password: sealed,
      pubkey: toBase64(keyPair.publicKey),
    });
    this.emit();
  }

  async login(user: string, password: string): Promise<void> {
    if (!this.readyForAuth()) return;
    const keyPair = this.keystore.loadKeyPair(user);
    if (keyPair === null) {
      this.banner = `no keys for ${user} on this device; register or import a keystore`;
      this.emit();
      return;
    }
    const sealed = await sealPassword(password, this.pinnedKey!);
    this.user = user;
    this.keyPair = keyPair;
    this.requests.push("login");
    this.transport?.send({ type: "LOGIN", user, password: sealed });
    this.emit();
  }

  /** Clears the session and transcripts and drops the connection. */
  logout(): void {
    this.token = null;
    this.user = null;
    this.keyPair = null;
    this.roster.clear();
    this.transcripts.clear();
    this.unread.clear();
    this.requests = [];
    for (const pending of this.pendingSends.values()) this.cancel(pending.timer);
    this.pendingSends.clear();
    this.view = { kind: "login" };
    this.banner = null;
    this.transport?.reset();
    this.emit();
  }

  // -- roster ------------------------------------------------------------------------

  addBuddy(email: string): void {
    if (!this.loggedIn) return;
    this.requests.push("add");
    this.transport?.send({ type: "ROSTER_ADD", email });
    this.emit();
  }

  refreshRoster(): void {
    if (!this.loggedIn) return;
    this.requests.push("roster");
    this.transport?.send({ type: "ROSTER_GET" });
  }

  openChat(buddy: string): void {
    // chat opens only off an authenticated roster
    if (!this.loggedIn || this.view.kind !== "roster") return;
    this.unread.delete(buddy);
    this.view = { kind: "chat", buddy };
    this.emit();
  }

  closeChat(): void {
    if (this.view.kind !== "chat") return;
    this.view = { kind: "roster" };
    this.refreshRoster();
    this.emit();
  }

  // -- chat --------------------------------------------------------------------------

  async sendMessage(text: string): Promise<void> {
    if (this.view.kind !== "chat" || !this.loggedIn) return;
    const buddy = this.view.buddy;
    if (text.length === 0) return;
    if (this.address === null || this.pinnedKey === null) return;
    if (!this.roster.has(buddy)) {
      this.appendRow(buddy, { kind: "error", detail: `${buddy} is not in the buddy list` });
      this.emit();
      return;
    }
    const letter: PlaintextLetter = {
      sender: this.address,
      recipient: buddy,
      body: text,
      sentAt: this.clock(),
    };
    const envelope = envelopeToBytes(await seal(letter, this.pinnedKey));
    const ref = sendRef(envelope);
    this.appendRow(buddy, {
      kind: "message",
      author: this.address,
      body: text,
      sentAt: letter.sentAt,
    });
    const timer = this.schedule(() => {
      this.failSend(ref);
      this.emit();
    }, CONFIG.SEND_ACK_TIMEOUT_MS);
    this.pendingSends.set(ref, { buddy, timer });
    const sent = this.transport?.send({ type: "SEND", envelope: toBase64(envelope) }) ?? false;
    if (!sent) this.failSend(ref);
    this.emit();
  }

  private failSend(ref: string): void {
    const pending = this.pendingSends.get(ref);
    if (pending === undefined) return;
    this.pendingSends.delete(ref);
    this.cancel(pending.timer);
    this.toast(`message to ${pending.buddy} was not acknowledged`);
  }

  // -- inbound frames ------------------------------------------------------------------

  private onAck(refId: string): void {
    const pending = this.pendingSends.get(refId);
    if (pending !== undefined) {
      this.cancel(pending.timer);
      this.pendingSends.delete(refId);
      return;
    }
    const kind = this.requests.shift();
    if (kind === undefined) return;
    if (kind === "register") {
      const credentials = this.pendingLogin;
      this.pendingLogin = null;
      this.banner = "registered";
      if (credentials !== null) void this.login(credentials.user, credentials.password);
      return;
    }
    if (kind === "login") {
      this.token = refId;
      this.banner = null;
      this.view = { kind: "roster" };
      this.refreshRoster();
      return;
    }
    if (kind === "roster") {
      let entries: RosterEntry[];
      try {
        entries = decodeRosterBlob(fromBase64(refId));
      } catch {
        this.toast("roster reply did not parse");
        return;
      }
      this.roster = new Map(entries.map((e) => [e.address, e]));
      return;
    }
    // kind === "add": the ACK carries the resolved address
    let address: string;
    try {
      address = new TextDecoder().decode(fromBase64(refId));
    } catch {
      return;
    }
    if (!this.roster.has(address)) {
      this.roster.set(address, { address, online: false, addedAt: this.clock() });
    }
    this.refreshRoster();
  }

  private onError(code: number, message: string): void {
    if (code === ErrorCode.NOT_AUTHENTICATED && this.token !== null) {
      this.token = null;
      this.view = { kind: "login" };
      this.banner = "session expired; log in again";
      this.requests = [];
      return;
    }
    const kind = this.requests.shift();
    if (kind === "register" || kind === "login") {
      this.pendingLogin = null;
      this.banner = `${kind} failed: ${message}`;
      return;
    }
    if (kind === "add") {
      this.toast(`add failed: ${message}`);
      return;
    }
    if (kind === "roster") {
      this.toast(`roster failed: ${message}`);
      return;
    }
    // no control request outstanding: this is a send failing, oldest first
    const oldest = this.pendingSends.keys().next();
    if (!oldest.done) {
      const pending = this.pendingSends.get(oldest.value)!;
      this.pendingSends.delete(oldest.value);
      this.cancel(pending.timer);
      this.appendRow(pending.buddy, { kind: "error", detail: message });
      return;
    }
    this.toast(`server error ${code}: ${message}`);
  }

  private async onDeliver(envelopeB64: string): Promise<void> {
    if (this.keyPair === null) return;
    let letter: PlaintextLetter;
    try {
      const envelope = envelopeFromBytes(fromBase64(envelopeB64));
      letter = await openLetter(envelope, this.keyPair.privateKey);
    } catch (exc) {
      const detail = exc instanceof EnvelopeError ? exc.constructor.name : "unreadable envelope";
      if (this.view.kind === "chat") {
        this.appendRow(this.view.buddy, { kind: "tamper", detail });
      } else {
        this.toast(`an envelope could not be opened (${detail})`);
      }
      return;
    }
    const buddy = letter.sender;
    this.appendRow(buddy, {
      kind: "message",
      author: letter.sender,
      body: letter.body,
      sentAt: letter.sentAt,
    });
    if (!(this.view.kind === "chat" && this.view.buddy === buddy)) {
      this.unread.set(buddy, (this.unread.get(buddy) ?? 0) + 1);
    }
  }

  // -- keystore portability --------------------------------------------------------------

  exportKeys(user: string): Uint8Array {
    return this.keystore.exportKeyPair(user);
  }

  importKeys(user: string, blob: Uint8Array): void {
    try {
      this.keystore.importKeyPair(user, blob);
      this.banner = `keystore imported for ${user}`;
    } catch (exc) {
      this.banner = `import failed: ${exc instanceof Error ? exc.message : exc}`;
    }
    this.emit();
  }

  // -- internals ---------------------------------------------------------------------

  private appendRow(buddy: string, row: TranscriptRow): void {
    const rows = this.transcripts.get(buddy);
    if (rows === undefined) {
      this.transcripts.set(buddy, [row]);
    } else {
      rows.push(row);
    }
  }

  private toast(text: string): void {
    this.toasts.push(text);
    if (this.toasts.length > CONFIG.MAX_TOASTS) this.toasts.shift();
  }

  dismissToast(index: number): void {
    this.toasts.splice(index, 1);
    this.emit();
  }

  private emit(): void {
    this.onChange?.();
  }
}
