/**
 * Hybrid sealed envelopes, byte-compatible with the relay network codec.
 *
 * Sealing draws a fresh 256-bit message key and 96-bit nonce, encrypts the
 * canonical letter bytes under AES-256-GCM, and wraps the message key to the
 * recipient's public key via an ephemeral X25519 exchange + HKDF-SHA256.
 * Opening fails closed: a wrap that does not authenticate is a key mismatch,
 * a payload that does not authenticate is tampering, and decrypted bytes that
 * do not parse are a malformed letter. Never partial plaintext.
 *
 * X25519 comes from @noble/curves (pure JS, same clamping as RFC 7748);
 * AES-GCM rides the Web Crypto API available in every modern browser.
 */

import { x25519 } from "@noble/curves/ed25519.js";
import { hkdf } from "@noble/hashes/hkdf.js";
import { sha256 } from "@noble/hashes/sha256.js";

import { ByteReader, ByteWriter, concatBytes, toHex, utf8Decode, utf8Encode } from "./bytes.js";

export const KEY_SIZE = 32;
export const NONCE_SIZE = 12;
export const TAG_SIZE = 16;
// eph pub (32) + wrap nonce (12) + wrapped 32-byte key with GCM tag (48)
export const WRAPPED_KEY_SIZE = 92;
export const MAX_BODY_BYTES = 64 * 1024;

const WRAP_INFO = utf8Encode("relaymesh.v1.key-wrap");

// name@agency grammar; JS anchors never admit a trailing newline
const ADDRESS_RE = /^[a-z0-9_]{1,32}@[A-Za-z0-9][A-Za-z0-9_-]{0,63}$/;

export class EnvelopeError extends Error {}
export class OversizeBody extends EnvelopeError {}
export class WrongKey extends EnvelopeError {}
export class TamperDetected extends EnvelopeError {}
export class MalformedLetter extends EnvelopeError {}
export class MalformedEnvelope extends EnvelopeError {}

export interface KeyPair {
  publicKey: Uint8Array;
  privateKey: Uint8Array;
}

export interface PlaintextLetter {
  sender: string;
  recipient: string;
  body: string;
  sentAt: number;
}

export interface SealedEnvelope {
  wrappedKey: Uint8Array;
  nonce: Uint8Array;
  ciphertext: Uint8Array;
  tag: Uint8Array;
}

export function validAddress(address: string): boolean {
  return ADDRESS_RE.test(address);
}

export function generateKeyPair(): KeyPair {
  const privateKey = x25519.utils.randomPrivateKey();
  return { privateKey, publicKey: x25519.getPublicKey(privateKey) };
}

/** 16 hex chars identifying a public key in directories and warnings. */
export function fingerprint(publicKey: Uint8Array): string {
  return toHex(sha256(publicKey)).slice(0, 16);
}

// -- canonical byte encodings ----------------------------------------------------

export function letterToBytes(letter: PlaintextLetter): Uint8Array {
  if (!validAddress(letter.sender)) {
    throw new MalformedLetter(`bad sender address: ${letter.sender}`);
  }
  if (!validAddress(letter.recipient)) {
    throw new MalformedLetter(`bad recipient address: ${letter.recipient}`);
  }
  if (!Number.isSafeInteger(letter.sentAt) || letter.sentAt < 0) {
    throw new MalformedLetter(`sent_at out of range: ${letter.sentAt}`);
  }
  const body = utf8Encode(letter.body);
  if (body.length > MAX_BODY_BYTES) {
    throw new OversizeBody(`body is ${body.length} bytes, limit ${MAX_BODY_BYTES}`);
  }
  const sender = utf8Encode(letter.sender);
  const recipient = utf8Encode(letter.recipient);
  return new ByteWriter()
    .u16(sender.length).bytes(sender)
    .u16(recipient.length).bytes(recipient)
    .u64(letter.sentAt)
    .u32(body.length).bytes(body)
    .finish();
}

export function letterFromBytes(data: Uint8Array): PlaintextLetter {
  let sender: string, recipient: string, body: string, sentAt: number;
  try {
    const r = new ByteReader(data);
    const senderBytes = r.take(r.u16());
    const recipientBytes = r.take(r.u16());
    sentAt = r.u64();
    const bodyBytes = r.take(r.u32());
    r.finish();
    if (bodyBytes.length > MAX_BODY_BYTES) {
      throw new Error("body exceeds size limit");
    }
    sender = utf8Decode(senderBytes);
    recipient = utf8Decode(recipientBytes);
    body = utf8Decode(bodyBytes);
  } catch (exc) {
    throw new MalformedLetter(String(exc instanceof Error ? exc.message : exc));
  }
  if (!validAddress(sender) || !validAddress(recipient)) {
    throw new MalformedLetter("letter addresses fail grammar");
  }
  return { sender, recipient, body, sentAt };
}

export function envelopeToBytes(env: SealedEnvelope): Uint8Array {
  return new ByteWriter()
    .u16(env.wrappedKey.length).bytes(env.wrappedKey)
    .u16(env.nonce.length).bytes(env.nonce)
    .u32(env.ciphertext.length).bytes(env.ciphertext)
    .u16(env.tag.length).bytes(env.tag)
    .finish();
}

export function envelopeFromBytes(data: Uint8Array): SealedEnvelope {
  try {
    const r = new ByteReader(data);
    const wrappedKey = r.take(r.u16());
    const nonce = r.take(r.u16());
    const ciphertext = r.take(r.u32());
    const tag = r.take(r.u16());
    r.finish();
    return { wrappedKey, nonce, ciphertext, tag };
  } catch (exc) {
    throw new MalformedEnvelope(String(exc instanceof Error ? exc.message : exc));
  }
}

// -- AES-256-GCM via Web Crypto ----------------------------------------------------

async function gcmKey(raw: Uint8Array, usage: KeyUsage): Promise<CryptoKey> {
  return crypto.subtle.importKey("raw", raw as BufferSource, { name: "AES-GCM" }, false, [usage]);
}

/** Returns ciphertext with the 16-byte tag appended, as GCM emits it. */
async function gcmSeal(key: Uint8Array, nonce: Uint8Array, plaintext: Uint8Array): Promise<Uint8Array> {
  const k = await gcmKey(key, "encrypt");
  const out = await crypto.subtle.encrypt(
    { name: "AES-GCM", iv: nonce as BufferSource }, k, plaintext as BufferSource
  );
  return new Uint8Array(out);
}

async function gcmOpen(key: Uint8Array, nonce: Uint8Array, sealed: Uint8Array): Promise<Uint8Array> {
  const k = await gcmKey(key, "decrypt");
  const out = await crypto.subtle.decrypt(
    { name: "AES-GCM", iv: nonce as BufferSource }, k, sealed as BufferSource
  );
  return new Uint8Array(out);
}

// -- key wrap ---------------------------------------------------------------------

function deriveWrapKey(shared: Uint8Array, ephPub: Uint8Array, recipientPub: Uint8Array): Uint8Array {
  return hkdf(sha256, shared, undefined, concatBytes(WRAP_INFO, ephPub, recipientPub), KEY_SIZE);
}

async function wrapKey(messageKey: Uint8Array, recipientPub: Uint8Array): Promise<Uint8Array> {
  const ephPriv = x25519.utils.randomPrivateKey();
  const ephPub = x25519.getPublicKey(ephPriv);
  const shared = x25519.getSharedSecret(ephPriv, recipientPub);
  const kek = deriveWrapKey(shared, ephPub, recipientPub);
  const wrapNonce = crypto.getRandomValues(new Uint8Array(NONCE_SIZE));
  const sealed = await gcmSeal(kek, wrapNonce, messageKey);
  return concatBytes(ephPub, wrapNonce, sealed);
}

async function unwrapKey(wrapped: Uint8Array, privateKey: Uint8Array): Promise<Uint8Array> {
  if (wrapped.length !== WRAPPED_KEY_SIZE) {
    throw new WrongKey("wrapped key has wrong size");
  }
  const ephPub = wrapped.slice(0, 32);
  const wrapNonce = wrapped.slice(32, 32 + NONCE_SIZE);
  const sealed = wrapped.slice(32 + NONCE_SIZE);
  try {
    const shared = x25519.getSharedSecret(privateKey, ephPub);
    const recipientPub = x25519.getPublicKey(privateKey);
    const kek = deriveWrapKey(shared, ephPub, recipientPub);
    return await gcmOpen(kek, wrapNonce, sealed);
  } catch {
    // covers low-order points rejected by the exchange and GCM auth failures
    throw new WrongKey("message key does not unwrap");
  }
}

// -- seal / open ------------------------------------------------------------------

export async function sealBytes(data: Uint8Array, recipientPub: Uint8Array): Promise<SealedEnvelope> {
  const messageKey = crypto.getRandomValues(new Uint8Array(KEY_SIZE));
  const nonce = crypto.getRandomValues(new Uint8Array(NONCE_SIZE));
  const ctAndTag = await gcmSeal(messageKey, nonce, data);
  return {
    wrappedKey: await wrapKey(messageKey, recipientPub),
    nonce,
    ciphertext: ctAndTag.slice(0, ctAndTag.length - TAG_SIZE),
    tag: ctAndTag.slice(ctAndTag.length - TAG_SIZE),
  };
}

export async function openBytes(env: SealedEnvelope, privateKey: Uint8Array): Promise<Uint8Array> {
  const messageKey = await unwrapKey(env.wrappedKey, privateKey);
  try {
    return await gcmOpen(messageKey, env.nonce, concatBytes(env.ciphertext, env.tag));
  } catch {
    throw new TamperDetected("payload authentication failed");
  }
}

export async function seal(letter: PlaintextLetter, recipientPub: Uint8Array): Promise<SealedEnvelope> {
  return sealBytes(letterToBytes(letter), recipientPub);
}

export async function openLetter(env: SealedEnvelope, privateKey: Uint8Array): Promise<PlaintextLetter> {
  return letterFromBytes(await openBytes(env, privateKey));
}
