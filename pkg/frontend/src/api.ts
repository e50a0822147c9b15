/** Typed client for the recommendation service's HTTP+JSON contract. */

export interface LocationInfo {
  id: number;
  name: string;
  population: number;
  unemployment_rate: number;
  annual_rent: number;
  growth_rate: number;
  modeled: boolean;
}

export interface SchemaFeature {
  kind: "categorical" | "numeric";
  levels?: string[];
  units?: string;
}

export type SchemaMap = Record<string, SchemaFeature>;

export type ProfileValues = Record<string, string | number>;

export interface ValueItem {
  location_id: number;
  predicted_value: number;
}

export interface RecommendResponse {
  recommendations: ValueItem[];
  t: number;
  z: number;
  outcome_mode: string;
  note: string;
  model_hash: string;
}

export interface PredictResponse {
  predictions: ValueItem[];
  outcome_mode: string;
  model_hash: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`service returned ${status}`);
  }

  /** Field names reported by a 422 profile-validation failure. */
  invalidFields(): string[] {
    const d = this.detail as { invalid_fields?: unknown } | undefined;
    return Array.isArray(d?.invalid_fields) ? (d.invalid_fields as string[]) : [];
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchImpl: FetchLike = (u, i) => fetch(u, i),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, init);
    let body: unknown = null;
    try {
      body = await resp.json();
    } catch {
      body = null;
    }
    if (!resp.ok) {
      const detail = (body as { detail?: unknown } | null)?.detail ?? body;
      throw new ApiError(resp.status, detail);
    }
    return body as T;
  }

  private post<T>(path: string, payload: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(payload),
    });
  }

  health(): Promise<{ status: string; model_hash: string }> {
    return this.request("/health");
  }

  async locations(): Promise<LocationInfo[]> {
    const body = await this.request<{ locations: LocationInfo[] }>("/locations");
    return body.locations;
  }

  async schema(): Promise<SchemaMap> {
    const body = await this.request<{ features: SchemaMap }>("/schema");
    return body.features;
  }

  predict(profile: ProfileValues): Promise<PredictResponse> {
    return this.post("/predict", { profile });
  }

  recommend(
    profile: ProfileValues,
    unacceptable: number[],
    z: number,
  ): Promise<RecommendResponse> {
    return this.post("/recommend", { profile, unacceptable, z });
  }
}
