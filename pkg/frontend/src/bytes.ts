/**
 * Byte-level helpers shared by the envelope codec and the gateway JSON layer:
 * base64 for binary JSON fields, UTF-8 transcoding, and big-endian cursor
 * readers/writers for the canonical letter and envelope encodings.
 */

const B64_CHUNK = 0x8000; // keep String.fromCharCode argument lists bounded

export function toBase64(bytes: Uint8Array): string {
  let binary = "";
  for (let i = 0; i < bytes.length; i += B64_CHUNK) {
    binary += String.fromCharCode(...bytes.subarray(i, i + B64_CHUNK));
  }
  return btoa(binary);
}

export function fromBase64(text: string): Uint8Array {
  let binary: string;
  try {
    binary = atob(text);
  } catch {
    throw new Error("invalid base64");
  }
  const out = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) {
    out[i] = binary.charCodeAt(i);
  }
  return out;
}

export function toHex(bytes: Uint8Array): string {
  let out = "";
  for (const b of bytes) {
    out += b.toString(16).padStart(2, "0");
  }
  return out;
}

export function utf8Encode(text: string): Uint8Array {
  return new TextEncoder().encode(text);
}

/** Strict decode: malformed UTF-8 throws instead of producing U+FFFD. */
export function utf8Decode(bytes: Uint8Array): string {
  return new TextDecoder("utf-8", { fatal: true }).decode(bytes);
}

export function concatBytes(...parts: Uint8Array[]): Uint8Array {
  let total = 0;
  for (const p of parts) total += p.length;
  const out = new Uint8Array(total);
  let off = 0;
  for (const p of parts) {
    out.set(p, off);
    off += p.length;
  }
  return out;
}

export function bytesEqual(a: Uint8Array, b: Uint8Array): boolean {
  if (a.length !== b.length) return false;
  let diff = 0;
  for (let i = 0; i < a.length; i++) diff |= a[i]! ^ b[i]!;
  return diff === 0;
}

/** Big-endian writer for length-prefixed binary encodings. */
export class ByteWriter {
  private parts: Uint8Array[] = [];

  u8(value: number): this {
    this.parts.push(Uint8Array.of(value & 0xff));
    return this;
  }

  u16(value: number): this {
    const buf = new Uint8Array(2);
    new DataView(buf.buffer).setUint16(0, value);
    this.parts.push(buf);
    return this;
  }

  u32(value: number): this {
    const buf = new Uint8Array(4);
    new DataView(buf.buffer).setUint32(0, value >>> 0);
    this.parts.push(buf);
    return this;
  }

  u64(value: number): this {
    const buf = new Uint8Array(8);
    new DataView(buf.buffer).setBigUint64(0, BigInt(value));
    this.parts.push(buf);
    return this;
  }

  bytes(value: Uint8Array): this {
    this.parts.push(value);
    return this;
  }

  finish(): Uint8Array {
    return concatBytes(...this.parts);
  }
}

/** Big-endian cursor reader; every underrun throws, finish() rejects trailing bytes. */
export class ByteReader {
  private off = 0;
  private view: DataView;

  constructor(private data: Uint8Array) {
    this.view = new DataView(data.buffer, data.byteOffset, data.byteLength);
  }

  private need(n: number): void {
    if (this.off + n > this.data.length) {
      throw new Error("truncated field");
    }
  }

  u8(): number {
    this.need(1);
    return this.data[this.off++]!;
  }

  u16(): number {
    this.need(2);
    const value = this.view.getUint16(this.off);
    this.off += 2;
    return value;
  }

  u32(): number {
    this.need(4);
    const value = this.view.getUint32(this.off);
    this.off += 4;
    return value;
  }

  u64(): number {
    this.need(8);
    const value = this.view.getBigUint64(this.off);
    this.off += 8;
    if (value > BigInt(Number.MAX_SAFE_INTEGER)) {
      throw new Error("u64 exceeds safe integer range");
    }
    return Number(value);
  }

  take(n: number): Uint8Array {
    this.need(n);
    const out = this.data.slice(this.off, this.off + n);
    this.off += n;
    return out;
  }

  finish(): void {
    if (this.off !== this.data.length) {
      throw new Error("trailing bytes");
    }
  }
}
