/**
 * Typed client for the scoring service. Field names mirror the wire JSON
 * (snake_case) so responses type-check without translation.
 */

export interface PlanDoc {
  z_min: number;
  z_max: number;
  k_requested: number;
  slices: number[];
  short_extent: boolean;
}

export interface SliceInfo {
  z: number;
  annotated: boolean;
  pixel_counts: Record<string, number>;
}

export interface SessionDoc {
  id: string;
  status: "created" | "segmenting" | "annotating" | "finalized";
  created_at: number;
  image_ref: string;
  mask_ref: string;
  mask_source: string;
  dims: [number, number, number];
  spacing: [number, number, number];
  value_range: [number, number];
  k: number;
  flip_lr: boolean;
  plan: PlanDoc;
  slices: SliceInfo[];
  completion: { done: number; total: number };
}

export interface AnnotationDoc {
  z: number;
  rles: string[];
  pixel_counts: Record<string, number>;
  received_at?: number;
}

export interface LungMaskDoc {
  z: number;
  width: number;
  height: number;
  rles: string[];
}

export interface ModeReport {
  mode: "pixel" | "grid";
  per_category_ratio: Record<string, number>;
  total_ratio: number;
  per_category_volume_mm3: Record<string, number>;
  sampled_lung_volume_mm3: number;
  slices_used: number[];
  clip_to_lung: boolean;
  grid_params: { cell_edge: number; tau: number } | null;
}

export interface TimingSummary {
  setup_seconds: number;
  per_slice_seconds: Record<string, number>;
  total_seconds: number;
}

export interface Report {
  session_id: string;
  pixel: ModeReport;
  grid: ModeReport;
  timing: TimingSummary;
}

export interface CreateSessionBody {
  image_ref?: string;
  image_path?: string;
  mask_ref?: string;
  mask_path?: string;
  k?: number;
  flip_lr?: boolean;
}

export interface FinalizeBody {
  cell_edge?: number;
  tau?: number;
}

/** Structured error from the service's {code, message} documents. */
export class ServiceError extends Error {
  constructor(
    readonly code: string,
    message: string,
    readonly status: number,
  ) {
    super(message);
  }
}

async function raiseForStatus(resp: Response): Promise<void> {
  if (resp.ok) return;
  let code = `http_${resp.status}`;
  let message = resp.statusText;
  try {
    const doc = await resp.json();
    if (doc && typeof doc.code === "string") {
      code = doc.code;
      message = doc.message ?? message;
    }
  } catch {
    // non-JSON error body; keep the HTTP fallback
  }
  throw new ServiceError(code, message, resp.status);
}

export class ApiClient {
  constructor(readonly baseUrl: string = "") {}

  private url(path: string): string {
    return `${this.baseUrl}${path}`;
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.url(path));
    await raiseForStatus(resp);
    return (await resp.json()) as T;
  }

  private async sendJson<T>(path: string, method: string, body?: unknown): Promise<T> {
    const resp = await fetch(this.url(path), {
      method,
      headers: { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    await raiseForStatus(resp);
    return (await resp.json()) as T;
  }

  async uploadVolume(data: Uint8Array | ArrayBuffer): Promise<string> {
    // copy typed arrays: Buffer views can sit inside a larger pooled buffer
    const body = data instanceof Uint8Array ? new Uint8Array(data) : new Uint8Array(data);
    const resp = await fetch(this.url("/volumes"), {
      method: "POST",
      headers: { "content-type": "application/octet-stream" },
      body,
    });
    await raiseForStatus(resp);
    const doc = (await resp.json()) as { ref: string };
    return doc.ref;
  }

  createSession(body: CreateSessionBody): Promise<SessionDoc> {
    return this.sendJson("/sessions", "POST", body);
  }

  getSession(id: string): Promise<SessionDoc> {
    return this.getJson(`/sessions/${id}`);
  }

  listSessions(): Promise<{ sessions: Array<{ id: string; status: string }> }> {
    return this.getJson("/sessions");
  }

  sliceImageUrl(id: string, z: number, wc?: number, ww?: number): string {
    const params = new URLSearchParams();
    if (wc !== undefined) params.set("wc", String(wc));
    if (ww !== undefined) params.set("ww", String(ww));
    const query = params.toString();
    return this.url(`/sessions/${id}/slices/${z}/image${query ? `?${query}` : ""}`);
  }

  getLungMask(id: string, z: number): Promise<LungMaskDoc> {
    return this.getJson(`/sessions/${id}/slices/${z}/lungmask`);
  }

  getAnnotation(id: string, z: number): Promise<AnnotationDoc> {
    return this.getJson(`/sessions/${id}/slices/${z}/annotation`);
  }

  putAnnotation(id: string, z: number, rles: string[]): Promise<AnnotationDoc> {
    return this.sendJson(`/sessions/${id}/slices/${z}/annotation`, "PUT", { rles });
  }

  finalize(id: string, body: FinalizeBody = {}): Promise<Report> {
    return this.sendJson(`/sessions/${id}/finalize`, "POST", body);
  }

  getReport(id: string): Promise<Report> {
    return this.getJson(`/sessions/${id}/report`);
  }
}
