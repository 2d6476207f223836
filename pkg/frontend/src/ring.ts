/**
 * Snapshot history: a bounded ring of the last N ticks, recording gaps where
 * the stream skipped ticks (reconnects). Ticks are never fabricated; a gap
 * stays a gap.
 */

import type { StateSnapshotView } from "./model";

export interface RingEntry {
  snapshot: StateSnapshotView;
  /** Number of ticks missing between this entry and the previous one. */
  gapBefore: number;
}

export class SnapshotRing {
  private entries: RingEntry[] = [];

  constructor(readonly capacity: number = 300) {}

  /** Returns the entry if the snapshot advanced the ring, null for stale ticks. */
  push(snapshot: StateSnapshotView): RingEntry | null {
    const last = this.latest();
    if (last && snapshot.tick <= last.snapshot.tick) {
      return null; // duplicate or out-of-order delivery
    }
    const gapBefore = last ? snapshot.tick - last.snapshot.tick - 1 : 0;
    const entry: RingEntry = { snapshot, gapBefore };
    this.entries.push(entry);
    if (this.entries.length > this.capacity) {
      this.entries.splice(0, this.entries.length - this.capacity);
    }
    return entry;
  }

  latest(): RingEntry | null {
    return this.entries.length ? this.entries[this.entries.length - 1] : null;
  }

  all(): readonly RingEntry[] {
    return this.entries;
  }

  size(): number {
    return this.entries.length;
  }

  totalGapTicks(): number {
    return this.entries.reduce((sum, entry) => sum + entry.gapBefore, 0);
  }

  /** Rank series for the sparkline; gaps become nulls so lines break. */
  rankSeries(): (number | null)[] {
    const series: (number | null)[] = [];
    for (const entry of this.entries) {
      for (let i = 0; i < entry.gapBefore; i++) series.push(null);
      series.push(entry.snapshot.progress_rank);
    }
    return series;
  }

  /** Metric series for one node and key, gaps as nulls. */
  metricSeries(nodeId: string, key: string): (number | null)[] {
    const series: (number | null)[] = [];
    for (const entry of this.entries) {
      for (let i = 0; i < entry.gapBefore; i++) series.push(null);
      const node = entry.snapshot.nodes.find((n) => n.id === nodeId);
      const value = node?.metrics?.[key];
      series.push(typeof value === "number" ? value : null);
    }
    return series;
  }
}
