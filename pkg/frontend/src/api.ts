/** Typed client for the fedchat HTTP API. Every displayed fact comes from
 * these responses; the UI never fabricates corpus content. */

export interface Source {
  block_id: string;
  header: string;
  score: number;
}

export interface AskResponse {
  status: 'ok' | 'no_context';
  answer: string;
  expanded_question: string;
  sources: Source[];
  latency_ms: number;
  index_version: number;
}

export interface BlockPayload {
  block_id: string;
  doc_id: string;
  seq: number;
  header: string;
  text: string;
  byte_span: [number, number];
  metadata: { keywords: string[]; char_count: number; created_at: string };
}

export interface MetricsRow {
  round: number;
  client_id: string;
  loss: number;
  rouge1: number;
  rouge2: number;
  rougeL: number;
  bleu4: number;
  uplink_bytes: number;
  downlink_bytes: number;
}

export interface ContextFilter {
  name: string;
  keywords: string[];
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) {
      let detail = `HTTP ${resp.status}`;
      try {
        const body = (await resp.json()) as { detail?: string };
        if (body.detail) detail = body.detail;
      } catch {
        /* non-JSON error body */
      }
      throw new ApiError(resp.status, detail);
    }
    return (await resp.json()) as T;
  }

  ask(question: string, context?: string, k?: number): Promise<AskResponse> {
    const body: Record<string, unknown> = { question };
    if (context) body.context = context;
    if (k) body.k = k;
    return this.request<AskResponse>('/api/ask', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
  }

  block(blockId: string): Promise<BlockPayload> {
    return this.request<BlockPayload>(`/api/blocks/${encodeURIComponent(blockId)}`);
  }

  metrics(): Promise<{ rows: MetricsRow[] }> {
    return this.request<{ rows: MetricsRow[] }>('/api/metrics');
  }

  contexts(): Promise<{ contexts: ContextFilter[] }> {
    return this.request<{ contexts: ContextFilter[] }>('/api/contexts');
  }

  health(): Promise<{ status: string }> {
    return this.request<{ status: string }>('/api/health');
  }
}
