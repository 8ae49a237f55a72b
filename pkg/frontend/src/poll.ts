/**
 * Poll the diffusion job until it leaves the running state.
 */

import type { ResultStats } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) =>
  new Promise<void>((resolve) => setTimeout(resolve, ms));

export async function pollUntilDone(
  getStats: () => Promise<ResultStats>,
  { intervalMs = 1000, timeoutMs = 120_000, sleep = defaultSleep }:
    PollOptions = {},
): Promise<ResultStats> {
  const deadline = Date.now() + timeoutMs;
  for (;;) {
    const stats = await getStats();
    if (stats.status === "done") return stats;
    if (stats.status === "error") {
      throw new Error(stats.error ?? "diffusion job failed");
    }
    if (Date.now() >= deadline) {
      throw new Error(`diffusion job still ${stats.status} after ${timeoutMs} ms`);
    }
    await sleep(intervalMs);
  }
}
