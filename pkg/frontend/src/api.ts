// Typed client for the noisedirs service. Field names mirror
// schemas/service_wire.json at the repository root; the UI never computes on
// images or directions, it only presents what the service returns.

export interface EditSpecWire {
  direction_id: number;
  scale: number;
  window: [number, number] | null;
}

export interface SourceWire {
  seed: number | null;
  image_id: string | null;
}

export interface EditRequest {
  source: SourceWire;
  edits: EditSpecWire[];
  return_metrics: boolean;
}

export interface Sidecar {
  config_hash: string;
  edits: { direction: number; scale: number; window: [number, number] }[];
  eval_steps: number;
  guidance_scale: number;
  schedule: Record<string, unknown>;
  seed: number | null;
  source_image_id: string | null;
}

export interface EditResponse {
  image_id: string;
  image_url: string;
  sidecar: Sidecar;
  metrics: Record<string, unknown> | null;
}

export interface DirectionSummary {
  id: number;
  label: string | null;
  self_consistency: number;
  strip_scales: number[];
  strip_urls: string[];
}

export interface HealthInfo {
  status: string;
  bank_sha256: string;
  model_sha256: string;
  config_hash: string;
  directions: number;
}

export class ServiceError extends Error {
  constructor(
    readonly status: number,
    readonly detail: unknown,
  ) {
    super(`service error ${status}: ${JSON.stringify(detail)}`);
  }
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(this.baseUrl + path, init);
    if (!res.ok) {
      let detail: unknown;
      try {
        detail = (await res.json()).detail;
      } catch {
        detail = await res.text();
      }
      throw new ServiceError(res.status, detail);
    }
    return (await res.json()) as T;
  }

  health(): Promise<HealthInfo> {
    return this.request<HealthInfo>("/health");
  }

  async listDirections(): Promise<DirectionSummary[]> {
    const body = await this.request<{ directions: DirectionSummary[] }>("/directions");
    return body.directions;
  }

  directionDetail(id: number): Promise<DirectionSummary> {
    return this.request<DirectionSummary>(`/directions/${id}`);
  }

  submitEdit(request: EditRequest, signal?: AbortSignal): Promise<EditResponse> {
    return this.request<EditResponse>("/edits", {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(request),
      signal,
    });
  }

  async upload(file: Blob, filename = "upload.png"): Promise<string> {
    const form = new FormData();
    form.append("file", file, filename);
    const body = await this.request<{ image_id: string }>("/uploads", {
      method: "POST",
      body: form,
    });
    return body.image_id;
  }

  imageUrl(pathOrId: string): string {
    const path = pathOrId.startsWith("/") ? pathOrId : `/images/${pathOrId}`;
    return this.baseUrl + path;
  }

  async fetchImageBytes(pathOrId: string): Promise<ArrayBuffer> {
    const res = await this.fetchImpl(this.imageUrl(pathOrId));
    if (!res.ok) throw new ServiceError(res.status, "image fetch failed");
    return res.arrayBuffer();
  }
}
