// Thin typed wrapper over the session service. One method per route, no
// state; everything the UI knows about a session comes back through here.

export type Phase = "fitting" | "awaiting_annotations" | "finished" | "idle";

export interface SessionSummary {
  id: string;
  bundle: string;
  phase: Phase;
  mode: string;
  annotator: string;
  iteration: number;
  iterations: number;
  seed: number;
  pending_count: number;
  cumulative_annotations: number;
  latest_metrics: MetricDoc | null;
  error: string | null;
}

export interface PendingQuery {
  sample: number;
  concept: number;
  concept_name: string;
  uncertainty: number | null; // null for the seed batch and random mode
  image_ref: string | null;
  values: string[];
}

export interface AnnotationItem {
  sample: number;
  concept: number;
  value: number;
}

export interface MetricDoc {
  f1_c: number;
  f1_y: number;
  roc_auc_c: number | null;
  ecce_r: number;
  ecce_mad: number;
  ece1: number;
  ece2: number;
  dci: number | null;
  [key: string]: unknown;
}

export interface IterationDoc {
  iteration: number;
  cumulative_annotations: number;
  metrics: MetricDoc;
  acquired_pairs: [number, number][];
  wall_time: number;
  flags: string[];
}

export interface SessionConfig {
  mode?: "active" | "random";
  initial_samples?: number;
  samples_per_iteration?: number;
  iterations?: number;
  pool_size?: number;
  uncertainty_samples?: number;
  seed?: number;
  annotator?: "human" | "oracle";
  fit_epochs?: number;
  fit_learning_rate?: number;
  head_epochs?: number;
  prediction_samples?: number;
  compute_dci?: boolean;
}

/** Non-2xx response; `status` distinguishes rollback-worthy 409/422. */
export class ApiError extends Error {
  constructor(public status: number, public detail: string) {
    super(`HTTP ${status}: ${detail}`);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const res = await fetch(url, {
    headers: { "content-type": "application/json" },
    ...init,
  });
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
      else if (body) detail = JSON.stringify(body);
    } catch {
      // non-JSON error body; statusText is all we have
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  // base "" = same origin; the page is mounted under /ui, routes at the root
  constructor(private base: string = "") {}

  createSession(bundle: string, config: SessionConfig): Promise<{ id: string }> {
    return request(`${this.base}/sessions`, {
      method: "POST",
      body: JSON.stringify({ bundle, config }),
    });
  }

  listSessions(): Promise<SessionSummary[]> {
    return request(`${this.base}/sessions`);
  }

  getSession(id: string): Promise<SessionSummary> {
    return request(`${this.base}/sessions/${id}`);
  }

  getQueries(id: string): Promise<PendingQuery[]> {
    return request(`${this.base}/sessions/${id}/queries`);
  }

  postAnnotations(id: string, items: AnnotationItem[]): Promise<{ accepted: number }> {
    return request(`${this.base}/sessions/${id}/annotations`, {
      method: "POST",
      body: JSON.stringify(items),
    });
  }

  getMetrics(id: string): Promise<{ history: IterationDoc[] }> {
    return request(`${this.base}/sessions/${id}/metrics`);
  }

  deleteSession(id: string): Promise<{ deleted: string }> {
    return request(`${this.base}/sessions/${id}`, { method: "DELETE" });
  }
}
