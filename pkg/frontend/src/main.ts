/**
 * App shell: canvas drawing, parameter panel, layer switching, job polling.
 *
 * Strokes are kept client-side (so undo is trivial) and pushed to the
 * server en bloc before each diffusion run; the server deduplicates
 * identical resubmissions. Every displayed mask or score image is fetched
 * from the service - the client never segments anything itself.
 */

import { ApiError, Client, type ViewInfo } from "./api.js";
import { pollUntilDone } from "./poll.js";
import { PanelState, LAYERS } from "./state.js";
import { rasterizeStroke, StrokeSet, type Label, type Point } from "./strokes.js";

const client = new Client("");
const panel = new PanelState();
const strokes = new StrokeSet();

let views: ViewInfo[] = [];
let currentPath: Point[] = [];
let drawing = false;

const $ = (id: string) => document.getElementById(id)!;
const canvas = () => $("canvas") as HTMLCanvasElement;

function toast(message: string): void {
  const el = $("toast");
  el.textContent = message;
  el.classList.add("show");
  setTimeout(() => el.classList.remove("show"), 2500);
}

function currentView(): ViewInfo | null {
  return views.find((v) => v.id === panel.view) ?? null;
}

function strokeColor(label: Label): string {
  return label === "fg" ? "rgba(80,240,120,0.9)" : "rgba(240,80,80,0.9)";
}

async function redraw(): Promise<void> {
  const view = currentView();
  if (!view) return;
  const cv = canvas();
  cv.width = view.width;
  cv.height = view.height;
  const ctx = cv.getContext("2d")!;

  const layer = panel.layer;
  if ((layer === "mask" || layer === "score") && !panel.maskAvailable) {
    ctx.fillStyle = "#202228";
    ctx.fillRect(0, 0, cv.width, cv.height);
    ctx.fillStyle = "#aab";
    ctx.fillText("no diffusion result yet", 8, cv.height / 2);
    drawStrokes(ctx);
    return;
  }

  const base = await loadImage(client.renderUrl(view.id, layer === "mask" ? "rgb" : layer));
  ctx.drawImage(base, 0, 0);
  if (layer === "mask") {
    // overlay the served mask at the chosen opacity
    const mask = await loadImage(client.renderUrl(view.id, "mask"));
    ctx.globalAlpha = panel.opacity;
    ctx.drawImage(mask, 0, 0);
    ctx.globalAlpha = 1.0;
  }
  drawStrokes(ctx);
}

function drawStrokes(ctx: CanvasRenderingContext2D): void {
  if (!panel.view) return;
  for (const stroke of strokes.strokes(panel.view)) {
    ctx.fillStyle = strokeColor(stroke.label);
    for (const [x, y] of stroke.pixels) ctx.fillRect(x, y, 1, 1);
  }
}

function loadImage(url: string): Promise<HTMLImageElement> {
  return new Promise((resolve, reject) => {
    const img = new Image();
    img.onload = () => resolve(img);
    img.onerror = () => reject(new Error(`failed to load ${url}`));
    img.src = url + `&v=${panel.resultVersion}`; // cache-bust on new results
  });
}

function canvasPoint(ev: PointerEvent): Point {
  const rect = canvas().getBoundingClientRect();
  const view = currentView()!;
  const x = ((ev.clientX - rect.left) / rect.width) * view.width;
  const y = ((ev.clientY - rect.top) / rect.height) * view.height;
  return [x, y];
}

function bindCanvas(): void {
  const cv = canvas();
  cv.addEventListener("pointerdown", (ev) => {
    if (!currentView()) return;
    drawing = true;
    currentPath = [canvasPoint(ev)];
  });
  cv.addEventListener("pointermove", (ev) => {
    if (!drawing) return;
    currentPath.push(canvasPoint(ev));
  });
  cv.addEventListener("pointerup", () => {
    if (!drawing || !panel.view) return;
    drawing = false;
    const view = currentView()!;
    const label = (($("label-bg") as HTMLInputElement).checked ? "bg" : "fg") as Label;
    const radius = Number(($("brush") as HTMLInputElement).value);
    const pixels = rasterizeStroke(currentPath, radius, view);
    strokes.add(view.id, { label, pixels });
    currentPath = [];
    void redraw();
  });
}

async function pushStrokes(): Promise<void> {
  await client.reset();
  for (const viewId of strokes.views()) {
    for (const label of ["fg", "bg"] as Label[]) {
      const pixels = strokes.pixels(viewId, label);
      if (pixels.length > 0) {
        await client.submitScribbles(viewId, pixels, label);
      }
    }
  }
}

async function runDiffusion(): Promise<void> {
  if (!panel.canSubmit) {
    toast("a diffusion job is already running");
    return;
  }
  const params = {
    T: Number(($("param-T") as HTMLInputElement).value),
    bandwidth_edge: Number(($("param-be") as HTMLInputElement).value),
    bandwidth_unary: Number(($("param-bu") as HTMLInputElement).value),
    unary_mode: ($("param-unary") as HTMLSelectElement).value,
    g0_threshold: Number(($("param-g0") as HTMLInputElement).value),
    threshold_mode: ($("param-thr") as HTMLSelectElement).value,
  };
  try {
    await pushStrokes();
    const jobId = await client.startDiffusion(params);
    panel.beginJob(jobId);
    setStatus("diffusing...");
    const stats = await pollUntilDone(
      () => client.resultStats(panel.view ?? views[0].id),
      { intervalMs: 1000 },
    );
    panel.finishJob("done");
    const iou = stats.iou !== undefined ? `  IoU ${stats.iou.toFixed(4)}` : "";
    setStatus(`done (job ${stats.job_id})${iou}`);
    panel.setLayer("mask");
    syncLayerRadios();
    await redraw();
  } catch (err) {
    panel.finishJob("error");
    if (err instanceof ApiError && err.status === 409) {
      toast("job running");
    } else {
      toast(String(err));
      setStatus("failed; retry when ready");
    }
  }
}

function setStatus(text: string): void {
  $("status").textContent = text;
}

function syncLayerRadios(): void {
  for (const layer of LAYERS) {
    ($(`layer-${layer}`) as HTMLInputElement).checked = panel.layer === layer;
  }
}

async function boot(): Promise<void> {
  views = await client.views();
  const list = $("views");
  for (const v of views) {
    const btn = document.createElement("button");
    btn.textContent = v.id;
    btn.onclick = () => {
      panel.selectView(v.id);
      document.querySelectorAll("#views button").forEach(
        (b) => b.classList.toggle("active", b === btn));
      void redraw();
    };
    list.appendChild(btn);
  }
  for (const layer of LAYERS) {
    ($(`layer-${layer}`) as HTMLInputElement).onchange = () => {
      panel.setLayer(layer);
      void redraw();
    };
  }
  ($("opacity") as HTMLInputElement).oninput = (ev) => {
    panel.setOpacity(Number((ev.target as HTMLInputElement).value));
    void redraw();
  };
  $("undo").onclick = () => {
    if (panel.view && strokes.undo(panel.view)) void redraw();
  };
  $("clear").onclick = async () => {
    strokes.clear();
    await client.reset();
    panel.reset();
    void redraw();
  };
  $("run").onclick = () => void runDiffusion();
  bindCanvas();
  if (views.length > 0) {
    panel.selectView(views[0].id);
    (document.querySelector("#views button") as HTMLButtonElement)
      ?.classList.add("active");
    await redraw();
  }
  syncLayerRadios();
  setStatus("ready");
}

void boot();
