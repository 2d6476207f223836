/**
 * Client-side ed25519 signing. The private seed is loaded into memory from a
 * key file pasted or picked by the operator and never leaves the browser:
 * only signatures travel to the gateway.
 */

import nacl from "tweetnacl";

import { canonicalJsonBytes } from "./canon";

export const SIG_PREFIX = "ed25519:";

export interface OperatorKey {
  operatorId: string;
  /** 64-byte tweetnacl secret key (seed + public half). */
  secretKey: Uint8Array;
  publicKeyHex: string;
}

export function hexToBytes(hex: string): Uint8Array {
  if (hex.length % 2 !== 0 || /[^0-9a-fA-F]/.test(hex)) {
    throw new Error("invalid hex string");
  }
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.slice(i * 2, i * 2 + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

/** Load an operator key from the JSON key file {operator_id, private_seed}. */
export function loadOperatorKey(fileText: string): OperatorKey {
  const parsed = JSON.parse(fileText) as { operator_id?: string; private_seed?: string };
  if (!parsed.operator_id || !parsed.private_seed) {
    throw new Error("key file must contain operator_id and private_seed");
  }
  const seed = hexToBytes(parsed.private_seed);
  if (seed.length !== 32) {
    throw new Error("private_seed must be 32 bytes of hex");
  }
  return fromSeed(parsed.operator_id, seed);
}

export function fromSeed(operatorId: string, seed: Uint8Array): OperatorKey {
  const pair = nacl.sign.keyPair.fromSeed(seed);
  return {
    operatorId,
    secretKey: pair.secretKey,
    publicKeyHex: bytesToHex(pair.publicKey),
  };
}

export function signPayload(
  key: OperatorKey,
  payload: Record<string, string>
): string {
  const raw = canonicalJsonBytes(payload);
  const sig = nacl.sign.detached(raw, key.secretKey);
  return SIG_PREFIX + bytesToHex(sig);
}

export function verifyDetached(
  publicKeyHex: string,
  message: Uint8Array,
  sig: string
): boolean {
  if (!sig.startsWith(SIG_PREFIX)) return false;
  return nacl.sign.detached.verify(
    message,
    hexToBytes(sig.slice(SIG_PREFIX.length)),
    hexToBytes(publicKeyHex)
  );
}
