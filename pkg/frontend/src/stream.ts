/**
 * WebSocket snapshot consumer with automatic reconnect. Missed ticks surface
 * as gap markers in the ring; the client never invents data for them.
 */

import type { StateSnapshotView } from "./model";
import { SnapshotRing } from "./ring";

export interface StreamEvents {
  onSnapshot: (snapshot: StateSnapshotView, gapBefore: number) => void;
  onStatus: (connected: boolean) => void;
}

export interface SocketLike {
  onmessage: ((event: { data: unknown }) => void) | null;
  onclose: (() => void) | null;
  onopen: (() => void) | null;
  close(): void;
}

export type SocketFactory = (url: string) => SocketLike;

export class SnapshotStream {
  readonly ring = new SnapshotRing(300);
  private socket: SocketLike | null = null;
  private stopped = false;
  private reconnectMs = 500;

  constructor(
    private readonly wsUrl: string,
    private readonly events: StreamEvents,
    private readonly socketFactory: SocketFactory,
    private readonly scheduler: (fn: () => void, ms: number) => void = (fn, ms) => {
      setTimeout(fn, ms);
    }
  ) {}

  start(): void {
    this.stopped = false;
    this.connect();
  }

  stop(): void {
    this.stopped = true;
    this.socket?.close();
  }

  handleRaw(data: unknown): void {
    let snapshot: StateSnapshotView;
    try {
      snapshot = JSON.parse(String(data)) as StateSnapshotView;
    } catch {
      return; // malformed frame: ignore rather than fabricate
    }
    if (typeof snapshot.tick !== "number") return;
    const entry = this.ring.push(snapshot);
    if (entry) {
      this.events.onSnapshot(entry.snapshot, entry.gapBefore);
    }
  }

  private connect(): void {
    const socket = this.socketFactory(this.wsUrl);
    this.socket = socket;
    socket.onopen = () => {
      this.reconnectMs = 500;
      this.events.onStatus(true);
    };
    socket.onmessage = (event) => this.handleRaw(event.data);
    socket.onclose = () => {
      this.events.onStatus(false);
      if (!this.stopped) {
        this.scheduler(() => this.connect(), this.reconnectMs);
        this.reconnectMs = Math.min(this.reconnectMs * 2, 5000);
      }
    };
  }
}
