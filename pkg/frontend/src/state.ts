/**
 * View state and the review flows that mutate it.
 *
 * All state transitions wait for the server acknowledgement: a verdict
 * chip is never shown before /annotate returns, and the tree is always
 * replaced wholesale by the latest /tree response rather than edited in
 * place. Candidate order is the server's order, untouched.
 */

import {
  ApiError,
  Candidate,
  PoolsView,
  ServiceClient,
  TrainOverrides,
  TrainStatus,
  TreeNodeView,
  Verdict,
} from "./api.js";

export interface CandidateRow {
  factId: string;
  text: string;
  score: number;
  /** Token-Jaccard overlap with the query node, shown as a badge. */
  overlap: number;
  /** Set only after the server acknowledges the annotation. */
  verdict: Verdict | null;
}

export interface ViewState {
  session: string | null;
  hypothesisId: string | null;
  tree: TreeNodeView | null;
  queryNodeId: string | null;
  queryText: string | null;
  candidates: CandidateRow[];
  pools: PoolsView | null;
  training: TrainStatus | null;
  indexGeneration: number;
  error: string | null;
}

export function initialState(): ViewState {
  return {
    session: null,
    hypothesisId: null,
    tree: null,
    queryNodeId: null,
    queryText: null,
    candidates: [],
    pools: null,
    training: null,
    indexGeneration: 0,
    error: null,
  };
}

function tokens(text: string): Set<string> {
  const parts = text.toLowerCase().split(/[^a-z0-9]+/);
  return new Set(parts.filter((p) => p.length > 0));
}

/** Jaccard overlap between token sets; informational only. */
export function tokenOverlap(a: string, b: string): number {
  const ta = tokens(a);
  const tb = tokens(b);
  if (ta.size === 0 && tb.size === 0) {
    return 0;
  }
  let shared = 0;
  for (const t of ta) {
    if (tb.has(t)) {
      shared += 1;
    }
  }
  return shared / (ta.size + tb.size - shared);
}

export function findNode(root: TreeNodeView | null, factId: string): TreeNodeView | null {
  if (root === null) {
    return null;
  }
  if (root.fact_id === factId) {
    return root;
  }
  for (const child of root.children) {
    const hit = findNode(child, factId);
    if (hit !== null) {
      return hit;
    }
  }
  return null;
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Drives one annotation session against the service. Every method
 * refreshes the affected slices of state from the server after the
 * mutation lands, so the view never gets ahead of the backend.
 */
export class Workbench {
  readonly client: ServiceClient;
  state: ViewState;

  constructor(client: ServiceClient) {
    this.client = client;
    this.state = initialState();
  }

  private fail(err: unknown): never {
    if (err instanceof ApiError) {
      this.state.error =
        err.status === 409 && err.error === "conflict"
          ? `cannot attach: ${err.detail}`
          : `${err.error} (${err.status}): ${err.detail}`;
    } else {
      this.state.error = String(err);
    }
    throw err;
  }

  async start(hypothesisId: string): Promise<void> {
    this.state.error = null;
    try {
      const created = await this.client.createSession(hypothesisId);
      this.state.session = created.session;
      this.state.hypothesisId = hypothesisId;
      this.state.candidates = [];
      this.state.queryNodeId = null;
      this.state.queryText = null;
      await this.refreshTree();
      await this.refreshPools();
      const health = await this.client.health();
      this.state.indexGeneration = health.index_generation;
    } catch (err) {
      this.fail(err);
    }
  }

  async refreshTree(): Promise<void> {
    if (this.state.session === null) {
      throw new Error("no active session");
    }
    const view = await this.client.tree(this.state.session);
    this.state.tree = view.root;
  }

  async refreshPools(): Promise<void> {
    this.state.pools = await this.client.pools();
  }

  /** Query a tree node and fill the candidate panel in server order. */
  async query(nodeId: string, k: number): Promise<void> {
    if (this.state.session === null) {
      throw new Error("no active session");
    }
    this.state.error = null;
    try {
      const node = findNode(this.state.tree, nodeId);
      const queryText = node === null ? "" : node.text;
      const ranked = await this.client.query(this.state.session, nodeId, k);
      this.state.queryNodeId = nodeId;
      this.state.queryText = queryText;
      this.state.candidates = ranked.map((c: Candidate) => ({
        factId: c.fact_id,
        text: c.text,
        score: c.score,
        overlap: tokenOverlap(queryText, c.text),
        verdict: null,
      }));
    } catch (err) {
      this.fail(err);
    }
  }

  private row(factId: string): CandidateRow {
    const row = this.state.candidates.find((c) => c.factId === factId);
    if (row === undefined) {
      throw new Error(`${factId} is not in the candidate panel`);
    }
    return row;
  }

  /** Endorse a candidate: annotate positive, then attach under the query node. */
  async markRelevant(factId: string): Promise<void> {
    const queryId = this.state.queryNodeId;
    if (this.state.session === null || queryId === null) {
      throw new Error("no query in progress");
    }
    this.state.error = null;
    const row = this.row(factId);
    try {
      await this.client.annotate(this.state.session, queryId, factId, "pos");
      row.verdict = "pos";
      await this.client.attach(this.state.session, queryId, factId);
      await this.refreshTree();
      await this.refreshPools();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Reject a candidate: annotate negative, no tree change. */
  async markIrrelevant(factId: string): Promise<void> {
    const queryId = this.state.queryNodeId;
    if (this.state.session === null || queryId === null) {
      throw new Error("no query in progress");
    }
    this.state.error = null;
    const row = this.row(factId);
    try {
      await this.client.annotate(this.state.session, queryId, factId, "neg");
      row.verdict = "neg";
      await this.refreshPools();
    } catch (err) {
      this.fail(err);
    }
  }

  /** Add a missing premise by hand and attach it under the query node. */
  async addManualFact(text: string): Promise<string> {
    const queryId = this.state.queryNodeId;
    if (this.state.session === null || queryId === null) {
      throw new Error("no query in progress");
    }
    this.state.error = null;
    try {
      const created = await this.client.addFact(this.state.session, text);
      await this.client.attach(this.state.session, queryId, created.fact_id);
      await this.refreshTree();
      return created.fact_id;
    } catch (err) {
      this.fail(err);
    }
  }

  /**
   * Kick off retraining and poll until the run settles. On success the
   * index generation moves forward; re-querying then reflects the new
   * encoder.
   */
  async retrain(overrides: TrainOverrides, pollMs = 500): Promise<TrainStatus> {
    this.state.error = null;
    try {
      const started = await this.client.train(overrides);
      let status = await this.client.trainStatus(started.run_id);
      this.state.training = status;
      while (status.state === "running") {
        await sleep(pollMs);
        status = await this.client.trainStatus(started.run_id);
        this.state.training = status;
      }
      const health = await this.client.health();
      this.state.indexGeneration = health.index_generation;
      return status;
    } catch (err) {
      this.fail(err);
    }
  }
}
