import { describe, expect, it } from "vitest";

import type { StateSnapshotView } from "../src/model";
import { SnapshotRing } from "../src/ring";
import { SnapshotStream, type SocketLike } from "../src/stream";

function snap(tick: number, rank = 5): StateSnapshotView {
  return {
    job_id: "job-t",
    tick,
    nodes: [
      { id: "node-0", state: "INF", isolated: false, metrics: { noiseBits: 30 - tick } },
    ],
    aggregator: "WAIT",
    progress_rank: rank,
    fired: [],
    last_ledger_root: "00",
    terminal: false,
    verdict: null,
  };
}

describe("snapshot ring", () => {
  it("keeps at most its capacity", () => {
    const ring = new SnapshotRing(300);
    for (let t = 0; t < 350; t++) ring.push(snap(t));
    expect(ring.size()).toBe(300);
    expect(ring.latest()!.snapshot.tick).toBe(349);
  });

  it("records gaps without fabricating ticks", () => {
    const ring = new SnapshotRing();
    ring.push(snap(0));
    ring.push(snap(1));
    const entry = ring.push(snap(5));
    expect(entry!.gapBefore).toBe(3);
    expect(ring.totalGapTicks()).toBe(3);
    expect(ring.size()).toBe(3); // three real snapshots, no invented ones
  });

  it("drops duplicate and out-of-order ticks", () => {
    const ring = new SnapshotRing();
    ring.push(snap(4));
    expect(ring.push(snap(4))).toBeNull();
    expect(ring.push(snap(2))).toBeNull();
    expect(ring.size()).toBe(1);
  });

  it("breaks chart series at gaps", () => {
    const ring = new SnapshotRing();
    ring.push(snap(0, 8));
    ring.push(snap(3, 6));
    expect(ring.rankSeries()).toEqual([8, null, null, 6]);
    expect(ring.metricSeries("node-0", "noiseBits")).toEqual([30, null, null, 27]);
  });
});

describe("snapshot stream", () => {
  function fakeSocketFactory() {
    const sockets: SocketLike[] = [];
    const factory = () => {
      const socket: SocketLike = {
        onmessage: null,
        onclose: null,
        onopen: null,
        close() {
          this.onclose?.();
        },
      };
      sockets.push(socket);
      return socket;
    };
    return { factory, sockets };
  }

  it("delivers parsed snapshots with gap counts", () => {
    const { factory, sockets } = fakeSocketFactory();
    const seen: Array<[number, number]> = [];
    const stream = new SnapshotStream(
      "ws://test",
      {
        onSnapshot: (s, gap) => seen.push([s.tick, gap]),
        onStatus: () => undefined,
      },
      factory,
      () => undefined
    );
    stream.start();
    sockets[0].onopen?.();
    sockets[0].onmessage?.({ data: JSON.stringify(snap(0)) });
    sockets[0].onmessage?.({ data: JSON.stringify(snap(1)) });
    sockets[0].onmessage?.({ data: JSON.stringify(snap(4)) });
    expect(seen).toEqual([
      [0, 0],
      [1, 0],
      [4, 2],
    ]);
  });

  it("ignores malformed frames", () => {
    const { factory, sockets } = fakeSocketFactory();
    const seen: number[] = [];
    const stream = new SnapshotStream(
      "ws://test",
      { onSnapshot: (s) => seen.push(s.tick), onStatus: () => undefined },
      factory,
      () => undefined
    );
    stream.start();
    sockets[0].onmessage?.({ data: "not json" });
    sockets[0].onmessage?.({ data: JSON.stringify({ nope: true }) });
    expect(seen).toEqual([]);
  });

  it("reconnects after close and reports status", () => {
    const { factory, sockets } = fakeSocketFactory();
    const statuses: boolean[] = [];
    const scheduled: Array<() => void> = [];
    const stream = new SnapshotStream(
      "ws://test",
      { onSnapshot: () => undefined, onStatus: (c) => statuses.push(c) },
      factory,
      (fn) => scheduled.push(fn)
    );
    stream.start();
    sockets[0].onopen?.();
    sockets[0].onclose?.();
    expect(statuses).toEqual([true, false]);
    expect(scheduled).toHaveLength(1);
    scheduled[0]();
    expect(sockets).toHaveLength(2);
    sockets[1].onopen?.();
    expect(statuses).toEqual([true, false, true]);
  });
});
