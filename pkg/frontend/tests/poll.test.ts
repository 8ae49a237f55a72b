import { describe, expect, it } from "vitest";

import type { ResultStats } from "../src/api.js";
import { pollUntilDone } from "../src/poll.js";

function statsSeq(states: ResultStats["status"][], iou?: number) {
  let i = 0;
  return async (): Promise<ResultStats> => {
    const status = states[Math.min(i, states.length - 1)];
    i += 1;
    return { status, job_id: 1, version: i, iou };
  };
}

const instant = async () => {};

describe("pollUntilDone", () => {
  it("resolves once the job is done", async () => {
    const stats = await pollUntilDone(
      statsSeq(["running", "running", "done"], 0.97),
      { intervalMs: 1, sleep: instant },
    );
    expect(stats.status).toBe("done");
    expect(stats.iou).toBe(0.97);
  });

  it("rejects when the job errors", async () => {
    await expect(pollUntilDone(statsSeq(["running", "error"]),
                               { intervalMs: 1, sleep: instant }))
      .rejects.toThrow(/failed/);
  });

  it("times out on a stuck job", async () => {
    await expect(pollUntilDone(statsSeq(["running"]),
                               { intervalMs: 1, timeoutMs: 0, sleep: instant }))
      .rejects.toThrow(/still running/);
  });

  it("sleeps between polls with the configured interval", async () => {
    const sleeps: number[] = [];
    await pollUntilDone(statsSeq(["running", "running", "done"]), {
      intervalMs: 1000,
      sleep: async (ms) => { sleeps.push(ms); },
    });
    expect(sleeps).toEqual([1000, 1000]);
  });
});
