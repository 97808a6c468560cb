/**
 * JSON gateway schema: each message mirrors one wire payload with its field
 * names preserved, binary fields base64-encoded, and the frame type name as
 * the "type" discriminator. The console only ever speaks the client subset;
 * relay and federation frames never cross the gateway from a browser.
 */

import { fromBase64, toBase64, ByteReader, utf8Decode, utf8Encode } from "./bytes.js";
import { envelopeToBytes, sealBytes } from "./envelope.js";
import { sha256 } from "@noble/hashes/sha256.js";

export const ErrorCode = {
  BAD_CREDENTIALS: 1,
  DUPLICATE_USER: 2,
  UNKNOWN_RECIPIENT: 3,
  NOT_AUTHENTICATED: 4,
  MALFORMED_PAYLOAD: 5,
  UNKNOWN_AGENCY: 6,
  WEAK_PASSWORD: 7,
  DUPLICATE_EMAIL: 8,
  UNKNOWN_EMAIL: 9,
} as const;

// -- messages the console sends --------------------------------------------------

export interface RegisterMessage {
  type: "REGISTER";
  user: string;
  email: string;
  password: string; // base64 of a password envelope sealed to the server key
  pubkey: string;
}

export interface LoginMessage {
  type: "LOGIN";
  user: string;
  password: string;
}

export interface RosterGetMessage {
  type: "ROSTER_GET";
}

export interface RosterAddMessage {
  type: "ROSTER_ADD";
  email: string;
}

export interface SendMessage {
  type: "SEND";
  envelope: string;
}

export interface PubkeyGetMessage {
  type: "PUBKEY_GET";
  address: string;
}

export type ClientMessage =
  | RegisterMessage
  | LoginMessage
  | RosterGetMessage
  | RosterAddMessage
  | SendMessage
  | PubkeyGetMessage;

// -- messages the console receives ------------------------------------------------

export interface AckMessage {
  type: "ACK";
  ref_id: string;
}

export interface ErrorMessage {
  type: "ERROR";
  code: number;
  message: string;
}

export interface DeliverMessage {
  type: "DELIVER";
  envelope: string;
}

export interface PubkeyRespMessage {
  type: "PUBKEY_RESP";
  address: string;
  pubkey: string;
}

export type ServerMessage = AckMessage | ErrorMessage | DeliverMessage | PubkeyRespMessage;

/** Directory alias that resolves to the serving agency's own address and key. */
export const SERVER_ALIAS = "server";

const STRING_FIELDS: Record<ServerMessage["type"], string[]> = {
  ACK: ["ref_id"],
  ERROR: ["message"],
  DELIVER: ["envelope"],
  PUBKEY_RESP: ["address", "pubkey"],
};

/** Parse one gateway frame off the socket; anything malformed throws. */
export function parseServerMessage(text: string): ServerMessage {
  const obj: unknown = JSON.parse(text);
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new Error("gateway message must be a JSON object");
  }
  const msg = obj as Record<string, unknown>;
  const type = msg["type"];
  if (typeof type !== "string" || !(type in STRING_FIELDS)) {
    throw new Error(`unexpected frame type ${JSON.stringify(type)}`);
  }
  for (const field of STRING_FIELDS[type as ServerMessage["type"]]) {
    if (typeof msg[field] !== "string") {
      throw new Error(`field ${field} must be a string`);
    }
  }
  if (type === "ERROR" && typeof msg["code"] !== "number") {
    throw new Error("field code must be a number");
  }
  return msg as unknown as ServerMessage;
}

// -- roster blob -------------------------------------------------------------------

export interface RosterEntry {
  address: string;
  online: boolean;
  addedAt: number;
}

/** ACK payload of ROSTER_GET: u16 count, then per entry a length-prefixed
 *  address, a presence byte, and a u64 added-at timestamp. */
export function decodeRosterBlob(blob: Uint8Array): RosterEntry[] {
  const r = new ByteReader(blob);
  const count = r.u16();
  const entries: RosterEntry[] = [];
  for (let i = 0; i < count; i++) {
    const address = utf8Decode(r.take(r.u16()));
    const online = r.u8() !== 0;
    const addedAt = r.u64();
    entries.push({ address, online, addedAt });
  }
  r.finish();
  return entries;
}

// -- credentials and send correlation ----------------------------------------------

/** Passwords never travel bare: seal to the pinned server key, then base64. */
export async function sealPassword(password: string, serverPub: Uint8Array): Promise<string> {
  const env = await sealBytes(utf8Encode(password), serverPub);
  return toBase64(envelopeToBytes(env));
}

/** ACKs for SEND carry the first 8 bytes of the envelope digest as ref_id. */
export function sendRef(envelopeBytes: Uint8Array): string {
  return toBase64(sha256(envelopeBytes).slice(0, 8));
}

export { fromBase64, toBase64 };
