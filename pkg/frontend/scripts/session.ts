/**
 * Scripted end-to-end UI session against a live service.
 *
 * Drives the same client modules the browser uses: starts the service on a
 * synthetic bundle, submits the bundle's scribble as strokes, runs a
 * diffusion job, polls it, checks the displayed IoU on every view, and
 * verifies the served mask bytes match a CLI segmentation run with the
 * same inputs byte for byte.
 *
 * Usage: node dist/scripts/session.js --bundle <dir> [--port 8543]
 */

import { spawn, spawnSync } from "node:child_process";
import { readFileSync } from "node:fs";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { Client } from "../src/api.js";
import { pollUntilDone } from "../src/poll.js";

interface Args {
  bundle: string;
  port: number;
  python: string;
  iouTarget: number;
}

function parseArgs(): Args {
  const argv = process.argv.slice(2);
  const get = (flag: string, fallback?: string): string | undefined => {
    const i = argv.indexOf(flag);
    return i >= 0 ? argv[i + 1] : fallback;
  };
  const bundle = get("--bundle");
  if (!bundle) {
    console.error("usage: session.js --bundle <dir> [--port N] [--python BIN]");
    process.exit(2);
  }
  return {
    bundle,
    port: Number(get("--port", "8543")),
    python: get("--python", "python3")!,
    iouTarget: Number(get("--iou-target", "0.95")),
  };
}

const sleep = (ms: number) => new Promise<void>((r) => setTimeout(r, ms));

async function waitForService(client: Client, timeoutMs = 30_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    try {
      await client.views();
      return;
    } catch {
      if (Date.now() > deadline) throw new Error("service did not come up");
      await sleep(250);
    }
  }
}

function fail(message: string): never {
  console.error(`[UI-SESSION] FAIL  ${message}`);
  process.exit(1);
}

async function main(): Promise<void> {
  const args = parseArgs();
  const base = `http://127.0.0.1:${args.port}`;
  const client = new Client(base);

  const service = spawn(args.python, [
    "-m", "splift.cli", "serve",
    "--scene", join(args.bundle, "scene.ply"),
    "--cameras", join(args.bundle, "cameras.json"),
    "--features", join(args.bundle, "gaussian_features.splf"),
    "--gt-dir", join(args.bundle, "gt_masks"),
    "--port", String(args.port),
  ], { stdio: ["ignore", "inherit", "inherit"] });

  try {
    await waitForService(client);
    const views = await client.views();
    console.log(`[UI-SESSION] service up with ${views.length} views`);

    const scribble = JSON.parse(
      readFileSync(join(args.bundle, "scribble_points.json"), "utf8"),
    ) as { camera_id: string; points: [number, number][] };

    await client.reset();
    const version = await client.submitScribbles(
      scribble.camera_id, scribble.points, "fg",
    );
    const again = await client.submitScribbles(
      scribble.camera_id, scribble.points, "fg",
    );
    if (version !== again) {
      fail(`stroke resubmission changed state version ${version} -> ${again}`);
    }
    console.log(`[UI-SESSION] submitted ${scribble.points.length} scribble ` +
      `pixels on ${scribble.camera_id} (version ${version}, idempotent)`);

    const jobId = await client.startDiffusion({ T: 100 });
    console.log(`[UI-SESSION] diffusion job ${jobId} started`);

    let worstIou = Infinity;
    for (const view of views) {
      const stats = await pollUntilDone(() => client.resultStats(view.id),
                                        { intervalMs: 200 });
      if (stats.iou === undefined) fail(`no IoU displayed for ${view.id}`);
      worstIou = Math.min(worstIou, stats.iou);
      console.log(`[UI-SESSION] ${view.id}: displayed IoU ${stats.iou.toFixed(4)}`);
    }
    if (worstIou < args.iouTarget) {
      fail(`worst displayed IoU ${worstIou.toFixed(4)} < ${args.iouTarget}`);
    }

    const served = new Map<string, Buffer>();
    for (const view of views) {
      served.set(view.id, Buffer.from(await client.resultMask(view.id)));
    }

    // equivalent CLI segmentation with identical annotation and parameters
    const outDir = mkdtempSync(join(tmpdir(), "ui-session-"));
    const cli = spawnSync(args.python, [
      "-m", "splift.cli", "segment",
      "--scene", join(args.bundle, "scene.ply"),
      "--cameras", join(args.bundle, "cameras.json"),
      "--features", join(args.bundle, "gaussian_features.splf"),
      "--fg-mask", join(args.bundle, "scribble.png"),
      "--fg-view", scribble.camera_id,
      "--fg-kind", "scribbles",
      "--out-dir", outDir,
    ], { stdio: ["ignore", "ignore", "inherit"] });
    if (cli.status !== 0) fail(`CLI segment exited with ${cli.status}`);

    for (const view of views) {
      const cliBytes = readFileSync(join(outDir, `${view.id}.png`));
      const uiBytes = served.get(view.id)!;
      if (!cliBytes.equals(uiBytes)) {
        fail(`mask bytes differ from CLI output for ${view.id}`);
      }
    }
    console.log("[UI-SESSION] served masks byte-identical to CLI segment output");
    console.log(`[UI-SESSION] PASS  worst displayed IoU ${worstIou.toFixed(4)} ` +
      `>= ${args.iouTarget} on all ${views.length} views`);
  } finally {
    service.kill("SIGTERM");
  }
}

main().catch((err) => {
  console.error(`[UI-SESSION] FAIL  ${err}`);
  process.exit(1);
});
