/**
 * Client-side scribble model.
 *
 * Strokes are captured as pointer paths and rasterized immediately into
 * sparse pixel lists (disc-stamped polylines, clipped to the view bounds).
 * The wire format to the server is the pixel list, never an image, so the
 * annotation stays resolution-independent.
 */

export type Label = "fg" | "bg";
export type Point = [number, number];

export interface ViewDims {
  width: number;
  height: number;
}

export interface Stroke {
  label: Label;
  pixels: Point[];
}

/** Stamp a disc of the given radius around (cx, cy), clipped to bounds. */
function stampDisc(cx: number, cy: number, radius: number, dims: ViewDims,
                   out: Set<number>): void {
  const r = Math.max(0, Math.round(radius));
  const x0 = Math.round(cx);
  const y0 = Math.round(cy);
  for (let dy = -r; dy <= r; dy++) {
    for (let dx = -r; dx <= r; dx++) {
      if (dx * dx + dy * dy > r * r) continue;
      const x = x0 + dx;
      const y = y0 + dy;
      if (x < 0 || y < 0 || x >= dims.width || y >= dims.height) continue;
      out.add(y * dims.width + x);
    }
  }
}

/**
 * Rasterize a pointer path into a deduplicated pixel list.
 *
 * The path is walked at sub-pixel steps and a brush disc is stamped at each
 * position; a single click (one-point path) leaves one disc. Pixels outside
 * the view are dropped. The result is sorted row-major for determinism.
 */
export function rasterizeStroke(path: Point[], radius: number,
                                dims: ViewDims): Point[] {
  const hits = new Set<number>();
  if (path.length === 0) return [];
  stampDisc(path[0][0], path[0][1], radius, dims, hits);
  for (let i = 1; i < path.length; i++) {
    const [ax, ay] = path[i - 1];
    const [bx, by] = path[i];
    const steps = Math.max(1, Math.ceil(Math.hypot(bx - ax, by - ay)));
    for (let s = 1; s <= steps; s++) {
      const t = s / steps;
      stampDisc(ax + t * (bx - ax), ay + t * (by - ay), radius, dims, hits);
    }
  }
  return [...hits].sort((a, b) => a - b)
    .map((k) => [k % dims.width, Math.floor(k / dims.width)] as Point);
}

/** Per-view stroke collection with undo. */
export class StrokeSet {
  private byView = new Map<string, Stroke[]>();

  add(view: string, stroke: Stroke): void {
    if (stroke.pixels.length === 0) return;
    const list = this.byView.get(view) ?? [];
    list.push(stroke);
    this.byView.set(view, list);
  }

  /** Remove the most recent stroke of a view; false when nothing to undo. */
  undo(view: string): boolean {
    const list = this.byView.get(view);
    if (!list || list.length === 0) return false;
    list.pop();
    return true;
  }

  strokes(view: string): Stroke[] {
    return this.byView.get(view) ?? [];
  }

  /** Deduplicated pixels of one label across all strokes of a view. */
  pixels(view: string, label: Label): Point[] {
    const seen = new Set<string>();
    const out: Point[] = [];
    for (const stroke of this.strokes(view)) {
      if (stroke.label !== label) continue;
      for (const p of stroke.pixels) {
        const key = `${p[0]},${p[1]}`;
        if (!seen.has(key)) {
          seen.add(key);
          out.push(p);
        }
      }
    }
    return out;
  }

  views(): string[] {
    return [...this.byView.keys()].filter(
      (v) => (this.byView.get(v) ?? []).length > 0,
    );
  }

  clear(): void {
    this.byView.clear();
  }
}
