/** Wire types served by the gateway API. */

export interface NodeView {
  id: string;
  state: string;
  isolated: boolean;
  metrics: Record<string, number>;
}

export interface FiredPredicate {
  predicate_id: string;
  node_id: string;
  kind: string;
  tick: number;
}

export interface StateSnapshotView {
  job_id: string;
  tick: number;
  nodes: NodeView[];
  aggregator: string | null;
  progress_rank: number | null;
  fired: FiredPredicate[];
  last_ledger_root: string;
  terminal: boolean;
  verdict: string | null;
}

export interface LedgerRecord {
  index: number;
  tick: number;
  kind: string;
  payload_hash: string;
  meta: Record<string, string>;
}

export interface LedgerView {
  records: LedgerRecord[];
  blocks: unknown[];
}

export interface OverrideRequestBody {
  operator_id: string;
  kind: string;
  target: string;
  nonce: string;
  sig: string;
}

export interface OverrideResponse {
  status: "accepted" | "accepted-duplicate" | "rejected";
  reason?: string;
}

export const COMMAND_KINDS = ["A-BOOTSTRAP", "A-ABORT_JOB", "A-ISOLATE_PARTY"] as const;
export type CommandKind = (typeof COMMAND_KINDS)[number];

export const NODE_LANE_ORDER = ["IDLE", "PREF", "INF", "POSTF", "DONE", "ABORTED"] as const;
