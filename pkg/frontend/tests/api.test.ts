import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiError, Client } from "../src/api.js";

function mockFetch(status: number, body: unknown) {
  return vi.fn(async () => new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  }));
}

afterEach(() => {
  vi.unstubAllGlobals();
});

describe("Client", () => {
  it("sends scribbles as point lists in the wire format", async () => {
    const fetchMock = mockFetch(200, { version: 3, strokes: 1 });
    vi.stubGlobal("fetch", fetchMock);
    const client = new Client("http://svc");
    const version = await client.submitScribbles("view00", [[1, 2], [3, 4]], "fg");
    expect(version).toBe(3);
    const [url, init] = fetchMock.mock.calls[0] as unknown as [string, RequestInit];
    expect(url).toBe("http://svc/api/scribbles");
    expect(JSON.parse(init.body as string)).toEqual({
      view: "view00",
      strokes: [[1, 2], [3, 4]],
      label: "fg",
    });
  });

  it("surfaces 409 conflicts as ApiError", async () => {
    vi.stubGlobal("fetch", mockFetch(409, { error: "job already running" }));
    const client = new Client();
    await expect(client.startDiffusion({ T: 100 }))
      .rejects.toSatisfy((e: unknown) =>
        e instanceof ApiError && e.status === 409
        && /running/.test(e.message));
  });

  it("parses result stats including the displayed IoU", async () => {
    vi.stubGlobal("fetch", mockFetch(200, {
      status: "done", job_id: 2, version: 5, iou: 0.9712,
    }));
    const client = new Client();
    const stats = await client.resultStats("view01");
    expect(stats.status).toBe("done");
    expect(stats.iou).toBeCloseTo(0.9712);
  });

  it("builds render URLs from view and layer", () => {
    const client = new Client("http://svc");
    expect(client.renderUrl("v0", "pca"))
      .toBe("http://svc/api/render?view=v0&layer=pca");
  });

  it("lists views", async () => {
    vi.stubGlobal("fetch", mockFetch(200, {
      views: [{ id: "v0", width: 64, height: 48 }], version: 0,
    }));
    const client = new Client();
    const views = await client.views();
    expect(views).toHaveLength(1);
    expect(views[0].id).toBe("v0");
  });
});
