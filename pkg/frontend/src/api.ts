/**
 * Typed client for the trace-review HTTP API.
 *
 * Every method maps onto one endpoint and returns the documented body
 * shape. Server-side failures become ApiError carrying the service's
 * {code, message} payload; transport failures become NetworkError so
 * callers can offer a retry instead of treating them as rejections.
 */

export interface ToolCallDoc {
  name: string;
  arguments: Record<string, unknown>;
}

export interface TokenLogprobDoc {
  token: string;
  logprob: number;
  is_special?: boolean;
}

export interface MessageDoc {
  index: number;
  role: string;
  content: string;
  tool_calls?: ToolCallDoc[];
  token_logprobs?: TokenLogprobDoc[];
  is_task_description: boolean;
  is_iteration_limit_error: boolean;
}

export interface TraceDoc {
  trace_id: string;
  model: string;
  environment: string;
  scope: number;
  scaffold: string;
  task_id: string;
  trial: number;
  outcome_score: number | null;
  messages: MessageDoc[];
}

/** Row of GET /traces: trace_id plus the indexed metadata fields. */
export interface TraceSummary {
  trace_id: string;
  model: string;
  environment: string;
  scope: number;
  scaffold: string;
  task_id: string;
  trial: number;
}

export interface SupportDoc {
  msg_idx: number;
  quote: string;
}

export interface GraphNodeDoc {
  node_id: string;
  type: string;
  time: number;
  text: string;
  support: SupportDoc[];
}

export interface GraphEdgeDoc {
  src: string;
  dst: string;
  relation: string;
  time: number;
  support: SupportDoc[];
}

export interface WarningDoc {
  category: string;
  node_or_edge_id: string;
  detail: string;
}

export interface GraphDoc {
  trace_id: string;
  nodes: GraphNodeDoc[];
  edges: GraphEdgeDoc[];
  warnings: WarningDoc[];
}

export interface MotifHitDoc {
  motif: string;
  bindings: Record<string, string>;
}

export interface MotifsDoc {
  trace_id: string;
  hits: MotifHitDoc[];
}

export interface MarkerDoc {
  id: string;
  category: string;
  definition: string;
}

export interface NodeMarksDoc {
  marker_ids: string[];
  note?: string;
}

export interface AnnotationDoc {
  trace_id: string;
  annotator_id: string;
  submitted: boolean;
  nodes: Record<string, NodeMarksDoc>;
  trace_note?: string;
  revision?: number;
}

/** Non-2xx response; carries the service's {code, message} body. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** The request never produced a response (DNS, refused, dropped). */
export class NetworkError extends Error {
  constructor(cause: unknown) {
    super("request failed before reaching the server", { cause });
    this.name = "NetworkError";
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly token: string = "",
    private readonly fetchImpl: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request(method: string, path: string, body?: unknown): Promise<Response> {
    const headers: Record<string, string> = { accept: "application/json" };
    if (this.token !== "") headers.authorization = `Bearer ${this.token}`;
    const init: RequestInit = { method, headers };
    if (body !== undefined) {
      headers["content-type"] = "application/json";
      init.body = JSON.stringify(body);
    }
    let resp: Response;
    try {
      resp = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new NetworkError(err);
    }
    if (!resp.ok) {
      let code = "error";
      let message = `${resp.status} ${resp.statusText}`;
      try {
        const doc: unknown = await resp.json();
        if (doc !== null && typeof doc === "object") {
          const body = doc as { code?: unknown; message?: unknown };
          if (typeof body.code === "string") code = body.code;
          if (typeof body.message === "string") message = body.message;
        }
      } catch {
        // non-JSON error body; keep the status line
      }
      throw new ApiError(resp.status, code, message);
    }
    return resp;
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await this.request("GET", path);
    return (await resp.json()) as T;
  }

  async listTraces(filters: Record<string, string | number> = {}): Promise<TraceSummary[]> {
    const query = new URLSearchParams();
    for (const [key, value] of Object.entries(filters)) query.set(key, String(value));
    const qs = query.toString();
    const doc = await this.getJson<{ traces: TraceSummary[] }>(
      qs === "" ? "/traces" : `/traces?${qs}`,
    );
    return doc.traces;
  }

  async getTrace(traceId: string): Promise<TraceDoc> {
    return this.getJson(`/traces/${encodeURIComponent(traceId)}`);
  }

  async getGraph(traceId: string): Promise<GraphDoc> {
    return this.getJson(`/traces/${encodeURIComponent(traceId)}/graph`);
  }

  async getMotifs(traceId: string): Promise<MotifsDoc> {
    return this.getJson(`/traces/${encodeURIComponent(traceId)}/motifs`);
  }

  async getMarkers(): Promise<MarkerDoc[]> {
    const doc = await this.getJson<{ markers: MarkerDoc[] }>("/markers");
    return doc.markers;
  }

  /** Latest stored annotation, or null when none exists yet. */
  async getAnnotation(traceId: string, annotatorId: string): Promise<AnnotationDoc | null> {
    try {
      return await this.getJson<AnnotationDoc>(this.annotationPath(traceId, annotatorId));
    } catch (err) {
      if (err instanceof ApiError && err.status === 404) return null;
      throw err;
    }
  }

  /**
   * Store a revision. expectedRevision implements optimistic
   * concurrency: the write fails with 409 when the store moved past
   * that revision in the meantime. Returns the new revision number.
   */
  async putAnnotation(doc: AnnotationDoc, expectedRevision?: number): Promise<number> {
    const body: Record<string, unknown> = { ...doc };
    delete body.revision;
    if (expectedRevision !== undefined) body.expected_revision = expectedRevision;
    const resp = await this.request(
      "PUT",
      this.annotationPath(doc.trace_id, doc.annotator_id),
      body,
    );
    return ((await resp.json()) as { revision: number }).revision;
  }

  /** Ask the server to mark the latest revision submitted; it re-checks completeness. */
  async submitAnnotation(traceId: string, annotatorId: string): Promise<number> {
    const resp = await this.request(
      "POST",
      `${this.annotationPath(traceId, annotatorId)}/submit`,
    );
    return ((await resp.json()) as { revision: number }).revision;
  }

  private annotationPath(traceId: string, annotatorId: string): string {
    return `/annotations/${encodeURIComponent(traceId)}/${encodeURIComponent(annotatorId)}`;
  }
}
