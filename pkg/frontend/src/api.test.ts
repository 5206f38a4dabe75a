import { describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "./api.js";

function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "content-type": "application/json" },
  });
}

describe("ApiClient", () => {
  it("lists frames with paging params", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL) => {
      expect(String(url)).toBe("/api/v1/frames?page=2&page_size=10");
      return jsonResponse({ total: 12, page: 2, page_size: 10, frames: ["a", "b"] });
    });
    const api = new ApiClient("", fetchFn as unknown as typeof fetch);
    const page = await api.listFrames(2, 10);
    expect(page.frames).toEqual(["a", "b"]);
  });

  it("submits annotations as JSON and returns the stored record", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("/api/v1/annotations");
      expect(init?.method).toBe("POST");
      const body = JSON.parse(String(init?.body));
      expect(body.frame_id).toBe("rec/f0.png");
      return jsonResponse({ ...body, record_id: 7 }, 201);
    });
    const api = new ApiClient("", fetchFn as unknown as typeof fetch);
    const stored = await api.submitAnnotation({
      frame_id: "rec/f0.png",
      frame_w: 640,
      frame_h: 480,
      verdict: "accepted",
      glints: { "0": { x: 1, y: 2, source: "human" } },
    });
    expect(stored.record_id).toBe(7);
  });

  it("surfaces API error details", async () => {
    const fetchFn = vi.fn(async () => jsonResponse({ detail: "unknown frame 'x'" }, 404));
    const api = new ApiClient("", fetchFn as unknown as typeof fetch);
    await expect(api.getPrediction("x")).rejects.toThrowError(ApiError);
    await expect(api.getPrediction("x")).rejects.toThrow("unknown frame 'x'");
  });

  it("sends rerun overrides", async () => {
    const fetchFn = vi.fn(async (url: RequestInfo | URL, init?: RequestInit) => {
      expect(String(url)).toBe("/api/v1/frames/rec/f0.png/rerun");
      expect(JSON.parse(String(init?.body))).toEqual({ overrides: { "sla.eps": 4 } });
      return jsonResponse({ status: "ok", glints: {}, projected: {} });
    });
    const api = new ApiClient("", fetchFn as unknown as typeof fetch);
    await api.rerun("rec/f0.png", { "sla.eps": 4 });
    expect(fetchFn).toHaveBeenCalledOnce();
  });
});
