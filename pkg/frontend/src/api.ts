/**
 * Typed client for the annotation service HTTP API.
 *
 * Every method maps to one endpoint. Non-2xx responses carry a JSON
 * envelope {error, detail}; they are raised as ApiError so callers can
 * branch on status (409 attach conflicts become validation messages).
 */

export interface HypothesisInfo {
  fact_id: string;
  text: string;
}

export interface TreeNodeView {
  fact_id: string;
  text: string;
  role: string;
  children: TreeNodeView[];
}

export interface TreeView {
  session: string;
  root: TreeNodeView;
}

export interface Candidate {
  fact_id: string;
  text: string;
  score: number;
}

export interface PoolsView {
  positives: [string, string][];
  negatives: [string, string][];
  round: number;
  max_depth: number;
}

export interface TrainOverrides {
  loss?: "tml" | "scl";
  margin?: number;
  alpha?: number;
  temperature?: number;
  batch_size?: number;
  learning_rate?: number;
  epochs?: number;
  mode?: "single" | "siamese" | "dual";
  seed?: number;
}

export interface TrainStatus {
  run_id: string;
  state: "running" | "done" | "failed";
  epoch_losses: number[];
  skipped_triplets: number;
  wall_seconds: number;
  index_generation: number | null;
  detail: string | null;
}

export interface HealthView {
  status: string;
  index_generation: number;
}

export type Verdict = "pos" | "neg";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  status: number;
  error: string;
  detail: string;

  constructor(status: number, error: string, detail: string) {
    super(`${error}: ${detail}`);
    this.status = status;
    this.error = error;
    this.detail = detail;
  }
}

export class ServiceClient {
  private baseUrl: string;
  private fetchFn: FetchLike;

  constructor(baseUrl: string, fetchFn?: FetchLike) {
    // trailing slash would double up when paths are appended
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn ?? ((url, init) => fetch(url, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const init: RequestInit = { method };
    if (body !== undefined) {
      init.headers = { "content-type": "application/json" };
      init.body = JSON.stringify(body);
    }
    const res = await this.fetchFn(this.baseUrl + path, init);
    if (!res.ok) {
      const envelope = await res
        .json()
        .catch(() => ({ error: "http_error", detail: res.statusText }));
      throw new ApiError(res.status, envelope.error ?? "http_error", envelope.detail ?? "");
    }
    if (res.status === 204) {
      return undefined as T;
    }
    return (await res.json()) as T;
  }

  health(): Promise<HealthView> {
    return this.request("GET", "/health");
  }

  hypotheses(): Promise<HypothesisInfo[]> {
    return this.request("GET", "/hypotheses");
  }

  createSession(hypothesisId: string): Promise<{ session: string }> {
    return this.request("POST", "/session", { hypothesis_id: hypothesisId });
  }

  tree(sessionId: string): Promise<TreeView> {
    return this.request("GET", `/tree/${encodeURIComponent(sessionId)}`);
  }

  query(session: string, nodeId: string, k: number): Promise<Candidate[]> {
    return this.request("POST", "/query", { session, node_id: nodeId, k });
  }

  annotate(session: string, queryId: string, factId: string, verdict: Verdict): Promise<void> {
    return this.request("POST", "/annotate", {
      session,
      query_id: queryId,
      fact_id: factId,
      verdict,
    });
  }

  addFact(session: string, text: string): Promise<{ fact_id: string; encodable: boolean }> {
    return this.request("POST", "/fact", { session, text });
  }

  attach(session: string, parentId: string, childId: string): Promise<void> {
    return this.request("POST", "/attach", {
      session,
      parent_id: parentId,
      child_id: childId,
    });
  }

  pools(): Promise<PoolsView> {
    return this.request("GET", "/pools");
  }

  train(overrides: TrainOverrides): Promise<{ run_id: string }> {
    return this.request("POST", "/train", overrides);
  }

  trainStatus(runId: string): Promise<TrainStatus> {
    return this.request("GET", `/train/${encodeURIComponent(runId)}`);
  }
}
