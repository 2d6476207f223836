import { describe, expect, it } from "vitest";

import { canonicalJsonBytes } from "../src/canon";
import {
  bytesToHex,
  fromSeed,
  hexToBytes,
  loadOperatorKey,
  signPayload,
  verifyDetached,
} from "../src/signing";

// RFC 8032 test vector 1 (empty message).
const RFC_SEED = "9d61b19deffd5a60ba844af492ec2cc44449c5697b326919703bac031cae7f60";
const RFC_PUB = "d75a980182b10ab7d54bfed3c964073a0ee172f3daa62325af021a68f707511a";
const RFC_SIG =
  "e5564300c360ac729086e2cc806e828a84877f1eb8e5d974d873e06522490155" +
  "5fb8821590a33bacc61e39701cf9b46bd25bf5f0595bbe24655141438e7a100b";

describe("ed25519 signing", () => {
  it("derives the RFC 8032 public key from its seed", () => {
    const key = fromSeed("op-rfc", hexToBytes(RFC_SEED));
    expect(key.publicKeyHex).toBe(RFC_PUB);
  });

  it("reproduces the RFC 8032 signature over the empty message", () => {
    const key = fromSeed("op-rfc", hexToBytes(RFC_SEED));
    const nacl = require("tweetnacl");
    const sig = nacl.sign.detached(new Uint8Array(0), key.secretKey);
    expect(bytesToHex(sig)).toBe(RFC_SIG);
  });

  it("signs canonical payloads with the ed25519 prefix", () => {
    const key = fromSeed("op-a", new Uint8Array(32).fill(7));
    const payload = { operator_id: "op-a", kind: "A-ABORT_JOB", target: "all", nonce: "n-1" };
    const sig = signPayload(key, payload);
    expect(sig.startsWith("ed25519:")).toBe(true);
    expect(verifyDetached(key.publicKeyHex, canonicalJsonBytes(payload), sig)).toBe(true);
  });

  it("rejects tampered payloads", () => {
    const key = fromSeed("op-a", new Uint8Array(32).fill(7));
    const payload = { operator_id: "op-a", kind: "A-ABORT_JOB", target: "all", nonce: "n-1" };
    const sig = signPayload(key, payload);
    const other = canonicalJsonBytes({ ...payload, target: "node-0" });
    expect(verifyDetached(key.publicKeyHex, other, sig)).toBe(false);
  });

  it("loads operator key files", () => {
    const seed = new Uint8Array(32).fill(3);
    const fileText = JSON.stringify({
      operator_id: "op-demo",
      private_seed: bytesToHex(seed),
    });
    const key = loadOperatorKey(fileText);
    expect(key.operatorId).toBe("op-demo");
    expect(key.publicKeyHex).toBe(fromSeed("x", seed).publicKeyHex);
  });

  it("rejects malformed key files", () => {
    expect(() => loadOperatorKey("{}")).toThrow();
    expect(() =>
      loadOperatorKey(JSON.stringify({ operator_id: "x", private_seed: "abcd" }))
    ).toThrow();
  });

  it("hex helpers round-trip", () => {
    const bytes = new Uint8Array([0, 1, 0xab, 0xff]);
    expect(hexToBytes(bytesToHex(bytes))).toEqual(bytes);
    expect(() => hexToBytes("zz")).toThrow();
  });
});
