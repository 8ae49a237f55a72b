/**
 * View-panel state machine: selected view, display layer, overlay opacity,
 * and the single-job submission guard. Layer switches never touch strokes;
 * those live in the StrokeSet owned by the app shell.
 */

export const LAYERS = ["rgb", "pca", "score", "mask"] as const;
export type Layer = (typeof LAYERS)[number];

export type JobStatus = "idle" | "running" | "done" | "error";

export class PanelState {
  view: string | null = null;
  layer: Layer = "rgb";
  opacity = 0.5;
  jobStatus: JobStatus = "idle";
  jobId = 0;
  /** bumps whenever a diffusion result lands; mask overlays re-fetch on it */
  resultVersion = 0;

  selectView(view: string): void {
    this.view = view;
  }

  setLayer(layer: string): void {
    if (!(LAYERS as readonly string[]).includes(layer)) {
      throw new Error(`unknown layer ${layer}`);
    }
    this.layer = layer as Layer;
  }

  setOpacity(value: number): void {
    this.opacity = Math.min(1, Math.max(0, value));
  }

  /** True once a diffusion produced a result to display on mask/score. */
  get maskAvailable(): boolean {
    return this.resultVersion > 0;
  }

  get canSubmit(): boolean {
    return this.jobStatus !== "running";
  }

  beginJob(jobId: number): void {
    if (!this.canSubmit) {
      throw new Error("a diffusion job is already running");
    }
    this.jobId = jobId;
    this.jobStatus = "running";
  }

  finishJob(status: "done" | "error"): void {
    this.jobStatus = status;
    if (status === "done") this.resultVersion += 1;
  }

  reset(): void {
    this.jobStatus = "idle";
    this.resultVersion = 0;
  }
}
