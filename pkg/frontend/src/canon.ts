/**
 * Canonical JSON bytes for signing: lexicographically sorted keys, compact
 * separators, UTF-8. Must match the gateway's canonical encoding exactly,
 * byte for byte, or signatures will not verify.
 */

export type CanonValue =
  | string
  | number
  | boolean
  | null
  | CanonValue[]
  | { [key: string]: CanonValue };

function encode(value: CanonValue): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return "[" + value.map(encode).join(",") + "]";
  }
  const keys = Object.keys(value).sort();
  const parts = keys.map((key) => JSON.stringify(key) + ":" + encode(value[key]));
  return "{" + parts.join(",") + "}";
}

export function canonicalJsonBytes(value: CanonValue): Uint8Array {
  return new TextEncoder().encode(encode(value));
}

export function canonicalJsonString(value: CanonValue): string {
  return encode(value);
}
