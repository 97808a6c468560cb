/**
 * Browser keystore: per-user X25519 key pairs and the pinned server key,
 * persisted in local browser storage. The private key never leaves storage
 * except inside an export blob the user explicitly downloads; export/import
 * speaks the same binary keystore format as the desktop client (magic "SKEY",
 * version byte, length-prefixed private and public halves), so a key pair
 * moves freely between browser and CLI.
 */

import { ByteReader, ByteWriter, fromBase64, toBase64, utf8Encode } from "./bytes.js";
import { KeyPair, generateKeyPair } from "./envelope.js";

const KEYSTORE_MAGIC = utf8Encode("SKEY");
const KEYSTORE_VERSION = 1;

const KEYPAIR_PREFIX = "relaymesh.keypair.";
const PIN_PREFIX = "relaymesh.pin.";

export class KeystoreError extends Error {}

export function keyPairToBlob(keyPair: KeyPair): Uint8Array {
  return new ByteWriter()
    .bytes(KEYSTORE_MAGIC)
    .u8(KEYSTORE_VERSION)
    .u16(keyPair.privateKey.length).bytes(keyPair.privateKey)
    .u16(keyPair.publicKey.length).bytes(keyPair.publicKey)
    .finish();
}

export function keyPairFromBlob(blob: Uint8Array): KeyPair {
  if (blob.length < 5 || blob[0] !== 0x53 || blob[1] !== 0x4b || blob[2] !== 0x45 || blob[3] !== 0x59) {
    throw new KeystoreError("not a keystore blob");
  }
  if (blob[4] !== KEYSTORE_VERSION) {
    throw new KeystoreError(`unsupported keystore version ${blob[4]}`);
  }
  try {
    const r = new ByteReader(blob.slice(5));
    const privateKey = r.take(r.u16());
    const publicKey = r.take(r.u16());
    r.finish();
    return { privateKey, publicKey };
  } catch {
    throw new KeystoreError("truncated keystore blob");
  }
}

/** Storage-backed keystore; the Storage instance is injectable for tests. */
export class Keystore {
  constructor(private storage: Storage) {}

  loadKeyPair(user: string): KeyPair | null {
    const blob = this.storage.getItem(KEYPAIR_PREFIX + user);
    if (blob === null) return null;
    return keyPairFromBlob(fromBase64(blob));
  }

  saveKeyPair(user: string, keyPair: KeyPair): void {
    this.storage.setItem(KEYPAIR_PREFIX + user, toBase64(keyPairToBlob(keyPair)));
  }

  /** Fetch-or-create: registration mints the pair right in the browser. */
  obtainKeyPair(user: string): KeyPair {
    const existing = this.loadKeyPair(user);
    if (existing !== null) return existing;
    const keyPair = generateKeyPair();
    this.saveKeyPair(user, keyPair);
    return keyPair;
  }

  /** Export the stored pair as a downloadable blob the CLI can read. */
  exportKeyPair(user: string): Uint8Array {
    const keyPair = this.loadKeyPair(user);
    if (keyPair === null) {
      throw new KeystoreError(`no stored keys for ${user}`);
    }
    return keyPairToBlob(keyPair);
  }

  /** Import a blob from another device; rejects anything that does not parse. */
  importKeyPair(user: string, blob: Uint8Array): KeyPair {
    const keyPair = keyPairFromBlob(blob);
    this.saveKeyPair(user, keyPair);
    return keyPair;
  }

  /** Server key pinned on first contact, keyed by gateway URL. */
  loadPin(gatewayUrl: string): Uint8Array | null {
    const pin = this.storage.getItem(PIN_PREFIX + gatewayUrl);
    return pin === null ? null : fromBase64(pin);
  }

  savePin(gatewayUrl: string, serverPub: Uint8Array): void {
    this.storage.setItem(PIN_PREFIX + gatewayUrl, toBase64(serverPub));
  }
}
