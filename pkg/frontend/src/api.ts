/** Thin REST client for the gateway API. */

import type { LedgerView, OverrideRequestBody, OverrideResponse, StateSnapshotView } from "./model";

export class GatewayClient {
  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchImpl(this.baseUrl + path);
    if (!response.ok) {
      throw new Error(`${path}: HTTP ${response.status}`);
    }
    return (await response.json()) as T;
  }

  state(): Promise<StateSnapshotView> {
    return this.getJson("/api/v1/state");
  }

  manifest(): Promise<Record<string, unknown>> {
    return this.getJson("/api/v1/manifest");
  }

  ledger(): Promise<LedgerView> {
    return this.getJson("/api/v1/ledger");
  }

  ledgerVerify(): Promise<{ ok: boolean; detail: string }> {
    return this.getJson("/api/v1/ledger/verify");
  }

  async postOverride(
    body: OverrideRequestBody
  ): Promise<{ http: number; body: OverrideResponse }> {
    const response = await this.fetchImpl(this.baseUrl + "/api/v1/override", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return { http: response.status, body: (await response.json()) as OverrideResponse };
  }
}
