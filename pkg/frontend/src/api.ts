/**
 * Typed client for the scribble-service REST API. The UI displays mask
 * bytes exactly as served; nothing segmentation-related is computed here.
 */

export interface ViewInfo {
  id: string;
  width: number;
  height: number;
}

export interface DiffuseParams {
  T?: number;
  bandwidth_edge?: number;
  bandwidth_unary?: number;
  unary_mode?: string;
  g0_threshold?: number;
  threshold_mode?: string;
}

export interface ResultStats {
  status: "idle" | "running" | "done" | "error";
  job_id: number;
  error?: string | null;
  version: number;
  iou?: number;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function jsonOrThrow(resp: Response): Promise<any> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      if (body && body.error) detail = body.error;
    } catch {
      // non-JSON error body: keep the status text
    }
    throw new ApiError(resp.status, detail);
  }
  return resp.json();
}

export class Client {
  constructor(private base: string = "") {}

  async views(): Promise<ViewInfo[]> {
    const body = await jsonOrThrow(await fetch(`${this.base}/api/views`));
    return body.views;
  }

  renderUrl(view: string, layer: string): string {
    const q = new URLSearchParams({ view, layer });
    return `${this.base}/api/render?${q}`;
  }

  async submitScribbles(view: string, strokes: [number, number][],
                        label: string): Promise<number> {
    const resp = await fetch(`${this.base}/api/scribbles`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ view, strokes, label }),
    });
    const body = await jsonOrThrow(resp);
    return body.version;
  }

  async startDiffusion(params: DiffuseParams): Promise<number> {
    const resp = await fetch(`${this.base}/api/diffuse`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(params),
    });
    const body = await jsonOrThrow(resp);
    return body.job_id;
  }

  async resultStats(view: string): Promise<ResultStats> {
    const q = new URLSearchParams({ view, what: "stats" });
    return jsonOrThrow(await fetch(`${this.base}/api/result?${q}`));
  }

  /** Raw mask PNG bytes for a view (the single source of mask truth). */
  async resultMask(view: string): Promise<ArrayBuffer> {
    const q = new URLSearchParams({ view });
    const resp = await fetch(`${this.base}/api/result?${q}`);
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return resp.arrayBuffer();
  }

  async reset(): Promise<void> {
    await jsonOrThrow(await fetch(`${this.base}/api/reset`, { method: "POST" }));
  }
}
