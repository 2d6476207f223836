/**
 * DOM rendering. Everything shown is a direct projection of received
 * snapshots; the client derives no safety verdicts of its own beyond
 * choosing colors.
 */

import type { FiredPredicate, LedgerRecord, StateSnapshotView } from "./model";
import { NODE_LANE_ORDER } from "./model";
import type { SnapshotRing } from "./ring";

const STATE_COLORS: Record<string, string> = {
  IDLE: "#8b949e",
  PREF: "#d29922",
  INF: "#58a6ff",
  POSTF: "#3fb950",
  DONE: "#2ea043",
  ABORTED: "#f85149",
  WAIT: "#8b949e",
  MERGE: "#58a6ff",
  FINALIZE: "#2ea043",
};

export function require2d(canvas: HTMLCanvasElement): CanvasRenderingContext2D {
  const ctx = canvas.getContext("2d");
  if (!ctx) throw new Error("canvas 2d context unavailable");
  return ctx;
}

export function renderLanes(container: HTMLElement, snapshot: StateSnapshotView): void {
  const rows: string[] = [];
  for (const node of snapshot.nodes) {
    const cells = NODE_LANE_ORDER.map((state) => {
      const active = node.state === state;
      const color = active ? STATE_COLORS[state] : "#21262d";
      const textColor = active ? "#0d1117" : "#484f58";
      return `<span class="lane-cell" style="background:${color};color:${textColor}">${state}</span>`;
    }).join("");
    const tag = node.isolated ? ' <span class="iso-tag">isolated</span>' : "";
    rows.push(`<div class="lane"><span class="lane-name">${node.id}${tag}</span>${cells}</div>`);
  }
  const aggState = snapshot.aggregator ?? "?";
  const aggColor = STATE_COLORS[aggState] ?? "#8b949e";
  rows.push(
    `<div class="lane"><span class="lane-name">aggregator</span>` +
      `<span class="lane-cell agg" style="background:${aggColor};color:#0d1117">${aggState}</span></div>`
  );
  container.innerHTML = rows.join("");
}

export function renderAlertBanner(banner: HTMLElement, fired: FiredPredicate[]): void {
  if (!fired.length) {
    banner.style.display = "none";
    banner.textContent = "";
    return;
  }
  banner.style.display = "block";
  banner.textContent =
    "guard-rail fired: " +
    fired.map((f) => `${f.predicate_id} on ${f.node_id} -> ${f.kind}`).join(" | ");
}

export function drawSeries(
  canvas: HTMLCanvasElement,
  series: (number | null)[],
  color = "#58a6ff"
): void {
  const ctx = require2d(canvas);
  const { width, height } = canvas;
  ctx.clearRect(0, 0, width, height);
  const values = series.filter((v): v is number => v !== null);
  if (!values.length) return;
  const max = Math.max(...values, 1);
  const stepX = width / Math.max(series.length - 1, 1);
  ctx.strokeStyle = color;
  ctx.lineWidth = 1.5;
  let pen = false;
  ctx.beginPath();
  series.forEach((value, i) => {
    if (value === null) {
      pen = false; // gap: break the line, never interpolate
      return;
    }
    const x = i * stepX;
    const y = height - (value / max) * (height - 4) - 2;
    if (pen) {
      ctx.lineTo(x, y);
    } else {
      ctx.moveTo(x, y);
      pen = true;
    }
  });
  ctx.stroke();
}

/** Pick the backend-specific metric present in the snapshots, if any. */
export function activeMetricKey(snapshot: StateSnapshotView): string | null {
  for (const key of ["noiseBits", "epsilonSpent", "shareAuthFail"]) {
    if (snapshot.nodes.some((n) => typeof n.metrics?.[key] === "number")) {
      return key;
    }
  }
  return null;
}

export function renderStatus(el: HTMLElement, connected: boolean, ring: SnapshotRing): void {
  const latest = ring.latest();
  const gapNote = ring.totalGapTicks() ? ` · ${ring.totalGapTicks()} tick(s) missed` : "";
  el.innerHTML =
    `<span class="dot ${connected ? "live" : "dead"}"></span>` +
    (connected ? "live" : "disconnected") +
    (latest ? ` · tick ${latest.snapshot.tick}` : "") +
    gapNote;
}

export function renderVerdict(el: HTMLElement, snapshot: StateSnapshotView): void {
  if (snapshot.terminal && snapshot.verdict) {
    el.textContent = `job ${snapshot.verdict}`;
    el.style.display = "inline-block";
  } else {
    el.style.display = "none";
  }
}

export function renderOverrideResult(
  el: HTMLElement,
  text: string,
  ok: boolean
): void {
  el.textContent = text;
  el.style.color = ok ? "#3fb950" : "#f85149";
}

export function describeLedgerRecord(record: LedgerRecord): string {
  const meta = Object.entries(record.meta)
    .map(([k, v]) => `${k}=${v}`)
    .join(" ");
  return `ledger #${record.index} [${record.kind}] tick ${record.tick} ${meta}`;
}
