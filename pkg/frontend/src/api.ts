import type {
  EvaluateRequest,
  EvaluateResponse,
  OverallRankingsResponse,
  RegionsResponse,
  SweepResponse,
  WindowRankingsResponse,
} from './types.js';

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
    readonly field: string | null = null,
  ) {
    super(message);
    this.name = 'ApiError';
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

function trimBase(url: string): string {
  return url.replace(/\/+$/, '');
}

export class ApiClient {
  private base: string;

  constructor(baseUrl: string, private readonly fetchFn: FetchLike = (u, i) => fetch(u, i)) {
    this.base = trimBase(baseUrl);
  }

  get baseUrl(): string {
    return this.base;
  }

  setBaseUrl(url: string): void {
    this.base = trimBase(url);
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let res: Response;
    try {
      res = await this.fetchFn(this.base + path, init);
    } catch (err) {
      throw new ApiError(0, 'unreachable', `cannot reach ${this.base}: ${String(err)}`);
    }
    const body = await res.json().catch(() => null);
    if (!res.ok) {
      if (body && typeof body.code === 'string') {
        throw new ApiError(res.status, body.code, String(body.message ?? ''), body.field ?? null);
      }
      throw new ApiError(res.status, 'http_error', `request failed with status ${res.status}`);
    }
    return body as T;
  }

  regions(): Promise<RegionsResponse> {
    return this.request('/v1/regions');
  }

  rankings(): Promise<OverallRankingsResponse> {
    return this.request('/v1/sensitivity/rankings');
  }

  rankingsForWindow(windowStart: string): Promise<WindowRankingsResponse> {
    return this.request(`/v1/sensitivity/rankings?window=${encodeURIComponent(windowStart)}`);
  }

  evaluate(req: EvaluateRequest): Promise<EvaluateResponse> {
    return this.request('/v1/policy/evaluate', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(req),
    });
  }

  sweep(): Promise<SweepResponse> {
    return this.request('/v1/policy/sweep');
  }
}
