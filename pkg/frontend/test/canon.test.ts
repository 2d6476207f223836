import { describe, expect, it } from "vitest";

import { canonicalJsonBytes, canonicalJsonString } from "../src/canon";

describe("canonical JSON", () => {
  it("sorts keys and strips whitespace", () => {
    const text = canonicalJsonString({ b: 1, a: "x", c: null });
    expect(text).toBe('{"a":"x","b":1,"c":null}');
  });

  it("is key-order independent", () => {
    const one = canonicalJsonString({ x: 1, y: { b: 2, a: 3 } });
    const two = canonicalJsonString({ y: { a: 3, b: 2 }, x: 1 });
    expect(one).toBe(two);
  });

  // Frozen fixture: the gateway produces exactly these bytes for the same
  // payload, so signatures verify across the wire.
  it("matches the gateway encoding for an override payload", () => {
    const payload = {
      operator_id: "op-alice",
      kind: "A-ABORT_JOB",
      target: "all",
      nonce: "n-1",
    };
    expect(canonicalJsonString(payload)).toBe(
      '{"kind":"A-ABORT_JOB","nonce":"n-1","operator_id":"op-alice","target":"all"}'
    );
  });

  it("encodes to UTF-8 bytes", () => {
    const bytes = canonicalJsonBytes({ a: "é" });
    expect(Array.from(bytes)).toEqual(
      Array.from(new TextEncoder().encode('{"a":"é"}'))
    );
  });
});
