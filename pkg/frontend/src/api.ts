// Typed client for the /api/v1 service surface. Every server mutation the UI
// performs goes through this module, nothing else touches the network.

export type PointPair = [number, number];

export interface Prediction {
  frame_id: string;
  status: "ok" | "failed" | "skipped";
  reason: string | null;
  glints: Record<string, PointPair>;
  projected: Record<string, PointPair>;
  labels?: Record<string, PointPair>;
  matcher: string | null;
  median_residual: number | null;
  max_residual: number | null;
  inliers: number;
  frame_w: number;
  frame_h: number;
}

export interface GlintMark {
  x: number;
  y: number;
  source: "human" | "detected" | "template_projected";
}

export interface AnnotationRecord {
  v?: number;
  record_id?: number;
  frame_id: string;
  frame_w: number;
  frame_h: number;
  verdict: "accepted" | "corrected" | "rejected" | null;
  glints: Record<string, GlintMark>;
  timestamp?: number;
}

export interface FramePage {
  total: number;
  page: number;
  page_size: number;
  frames: string[];
}

export interface TemplateInfo {
  layout_name: string;
  K: number;
  led_ids: number[];
  points: PointPair[];
  path: string;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function asJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail = res.statusText;
    try {
      const body = await res.json();
      if (body && typeof body.detail === "string") detail = body.detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(res.status, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  constructor(
    private base: string = "",
    private fetchFn: typeof fetch = fetch,
  ) {}

  private url(path: string): string {
    return `${this.base}/api/v1${path}`;
  }

  listFrames(page = 1, pageSize = 200): Promise<FramePage> {
    return this.fetchFn(this.url(`/frames?page=${page}&page_size=${pageSize}`)).then((r) =>
      asJson<FramePage>(r),
    );
  }

  imageUrl(frameId: string): string {
    return this.url(`/frames/${frameId}/image`);
  }

  getPrediction(frameId: string): Promise<Prediction> {
    return this.fetchFn(this.url(`/frames/${frameId}/prediction`)).then((r) => asJson<Prediction>(r));
  }

  rerun(frameId: string, overrides: Record<string, unknown>): Promise<Prediction> {
    return this.fetchFn(this.url(`/frames/${frameId}/rerun`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ overrides }),
    }).then((r) => asJson<Prediction>(r));
  }

  getAnnotations(frameId?: string): Promise<{ annotations: AnnotationRecord[] }> {
    const suffix = frameId ? `?frame_id=${encodeURIComponent(frameId)}` : "";
    return this.fetchFn(this.url(`/annotations${suffix}`)).then((r) =>
      asJson<{ annotations: AnnotationRecord[] }>(r),
    );
  }

  submitAnnotation(record: AnnotationRecord): Promise<AnnotationRecord> {
    return this.fetchFn(this.url(`/annotations`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(record),
    }).then((r) => asJson<AnnotationRecord>(r));
  }

  buildTemplate(frameIds: string[], layoutName: string, method = "procrustes"): Promise<TemplateInfo> {
    return this.fetchFn(this.url(`/templates/build`), {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ frame_ids: frameIds, layout_name: layoutName, method }),
    }).then((r) => asJson<TemplateInfo>(r));
  }

  listTemplates(): Promise<{ templates: Array<{ name: string; path: string; K: number }> }> {
    return this.fetchFn(this.url(`/templates`)).then((r) => asJson(r));
  }
}
