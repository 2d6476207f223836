/**
 * Signed override issuance. Every override passes a mandatory confirmation
 * gate before it is signed and posted; the resulting ledger record is looked
 * up afterwards so the operator sees the audited evidence, not just the HTTP
 * status.
 */

import type { GatewayClient } from "./api";
import type { CommandKind, LedgerRecord, OverrideResponse } from "./model";
import { signPayload, type OperatorKey } from "./signing";

export interface OverrideOutcome {
  status: OverrideResponse["status"] | "cancelled";
  reason?: string;
  nonce: string;
  ledgerRecord?: LedgerRecord;
}

export function freshNonce(random: () => number = Math.random): string {
  const suffix = Math.floor(random() * 0xffffffff)
    .toString(16)
    .padStart(8, "0");
  return `ov-${Date.now().toString(16)}-${suffix}`;
}

/**
 * Confirm, sign, post, and attribute one override.
 *
 * `confirm` is the friction step: it must resolve true before anything is
 * signed. Pass the UI dialog in production and a stub in tests.
 */
export async function issueOverride(
  client: GatewayClient,
  key: OperatorKey,
  kind: CommandKind,
  target: string,
  confirm: (summary: string) => Promise<boolean>,
  nonce: string = freshNonce()
): Promise<OverrideOutcome> {
  const summary = `${kind} -> ${target}`;
  if (!(await confirm(summary))) {
    return { status: "cancelled", nonce };
  }
  const payload = {
    operator_id: key.operatorId,
    kind,
    target,
    nonce,
  };
  const sig = signPayload(key, payload);
  const { body } = await client.postOverride({ ...payload, sig });
  const outcome: OverrideOutcome = { status: body.status, reason: body.reason, nonce };
  if (body.status === "accepted") {
    outcome.ledgerRecord = await findOverrideRecord(client, nonce);
  }
  return outcome;
}

export async function findOverrideRecord(
  client: GatewayClient,
  nonce: string,
  attempts = 10,
  delayMs = 200,
  sleep: (ms: number) => Promise<void> = (ms) => new Promise((r) => setTimeout(r, ms))
): Promise<LedgerRecord | undefined> {
  for (let attempt = 0; attempt < attempts; attempt++) {
    const ledger = await client.ledger();
    const record = ledger.records.find(
      (r) => r.kind === "override" && r.meta["nonce"] === nonce
    );
    if (record) return record;
    await sleep(delayMs);
  }
  return undefined;
}
