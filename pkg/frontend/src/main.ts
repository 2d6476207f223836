/** Console bootstrap: wire the stream, lanes, charts, and override controls. */

import { GatewayClient } from "./api";
import type { CommandKind, StateSnapshotView } from "./model";
import { issueOverride } from "./override";
import { loadOperatorKey, type OperatorKey } from "./signing";
import { SnapshotStream } from "./stream";
import {
  activeMetricKey,
  describeLedgerRecord,
  drawSeries,
  renderAlertBanner,
  renderLanes,
  renderOverrideResult,
  renderStatus,
  renderVerdict,
} from "./view";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function gatewayBase(): string {
  return window.location.origin;
}

function wsUrl(): string {
  const base = gatewayBase().replace(/^http/, "ws");
  return `${base}/api/v1/stream`;
}

/** Modal confirmation: the operator must click confirm before signing. */
function confirmDialog(summary: string): Promise<boolean> {
  return new Promise((resolve) => {
    const overlay = byId<HTMLDivElement>("confirm-overlay");
    byId<HTMLSpanElement>("confirm-summary").textContent = summary;
    overlay.style.display = "flex";
    const done = (answer: boolean) => {
      overlay.style.display = "none";
      yes.removeEventListener("click", onYes);
      no.removeEventListener("click", onNo);
      resolve(answer);
    };
    const yes = byId<HTMLButtonElement>("confirm-yes");
    const no = byId<HTMLButtonElement>("confirm-no");
    const onYes = () => done(true);
    const onNo = () => done(false);
    yes.addEventListener("click", onYes);
    no.addEventListener("click", onNo);
  });
}

function main(): void {
  const client = new GatewayClient(gatewayBase());
  let operatorKey: OperatorKey | null = null;

  const lanes = byId<HTMLDivElement>("lanes");
  const banner = byId<HTMLDivElement>("alert-banner");
  const statusEl = byId<HTMLSpanElement>("conn-status");
  const verdictEl = byId<HTMLSpanElement>("verdict");
  const rankCanvas = byId<HTMLCanvasElement>("rank-spark");
  const metricCanvas = byId<HTMLCanvasElement>("metric-chart");
  const metricLabel = byId<HTMLSpanElement>("metric-label");
  const overrideResult = byId<HTMLDivElement>("override-result");

  const stream = new SnapshotStream(
    wsUrl(),
    {
      onSnapshot: (snapshot: StateSnapshotView) => {
        renderLanes(lanes, snapshot);
        renderAlertBanner(banner, snapshot.fired);
        renderVerdict(verdictEl, snapshot);
        renderStatus(statusEl, true, stream.ring);
        drawSeries(rankCanvas, stream.ring.rankSeries(), "#d29922");
        const key = activeMetricKey(snapshot);
        if (key) {
          metricLabel.textContent = key;
          const firstNode = snapshot.nodes[0]?.id;
          if (firstNode) {
            drawSeries(metricCanvas, stream.ring.metricSeries(firstNode, key));
          }
        }
      },
      onStatus: (connected) => renderStatus(statusEl, connected, stream.ring),
    },
    (url) => new WebSocket(url) as unknown as import("./stream").SocketLike
  );
  stream.start();

  byId<HTMLInputElement>("key-file").addEventListener("change", async (event) => {
    const input = event.target as HTMLInputElement;
    const file = input.files?.[0];
    if (!file) return;
    try {
      operatorKey = loadOperatorKey(await file.text());
      byId<HTMLSpanElement>("operator-name").textContent = operatorKey.operatorId;
      renderOverrideResult(overrideResult, `key loaded for ${operatorKey.operatorId}`, true);
    } catch (error) {
      renderOverrideResult(overrideResult, `key load failed: ${String(error)}`, false);
    }
  });

  for (const kind of ["A-BOOTSTRAP", "A-ABORT_JOB", "A-ISOLATE_PARTY"] as CommandKind[]) {
    byId<HTMLButtonElement>(`btn-${kind}`).addEventListener("click", async () => {
      if (!operatorKey) {
        renderOverrideResult(overrideResult, "load an operator key first", false);
        return;
      }
      const target = byId<HTMLSelectElement>("target-select").value;
      const outcome = await issueOverride(client, operatorKey, kind, target, confirmDialog);
      if (outcome.status === "cancelled") {
        renderOverrideResult(overrideResult, "cancelled", false);
      } else if (outcome.status === "accepted") {
        const evidence = outcome.ledgerRecord
          ? ` · ${describeLedgerRecord(outcome.ledgerRecord)}`
          : "";
        renderOverrideResult(overrideResult, `accepted${evidence}`, true);
      } else if (outcome.status === "accepted-duplicate") {
        renderOverrideResult(overrideResult, "accepted-duplicate (no second command)", true);
      } else {
        renderOverrideResult(overrideResult, `rejected: ${outcome.reason ?? "unknown"}`, false);
      }
    });
  }

  // Populate the target selector once the first snapshot arrives.
  const targetSelect = byId<HTMLSelectElement>("target-select");
  client
    .state()
    .then((snapshot) => {
      const options = ["all", "aggregator", ...snapshot.nodes.map((n) => n.id)];
      targetSelect.innerHTML = options
        .map((value) => `<option value="${value}">${value}</option>`)
        .join("");
    })
    .catch(() => undefined);
}

document.addEventListener("DOMContentLoaded", main);
