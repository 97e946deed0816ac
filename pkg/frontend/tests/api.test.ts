import { describe, expect, it } from "vitest";

import { ApiClient, EditRequest, ServiceError } from "../src/api.js";

function mockFetch(routes: Record<string, (init?: RequestInit) => Response>) {
  const seen: { url: string; init?: RequestInit }[] = [];
  const impl = async (url: string, init?: RequestInit) => {
    seen.push({ url, init });
    const handler = routes[url.split("?")[0]];
    if (!handler) return new Response(JSON.stringify({ detail: "not found" }), { status: 404 });
    return handler(init);
  };
  return { impl, seen };
}

const json = (body: unknown, status = 200) =>
  new Response(JSON.stringify(body), { status, headers: { "content-type": "application/json" } });

describe("api client", () => {
  it("lists directions", async () => {
    const { impl } = mockFetch({
      "/directions": () =>
        json({
          directions: [
            { id: 0, label: null, self_consistency: 0.9, strip_scales: [-2, -1, 0, 1, 2], strip_urls: [] },
          ],
        }),
    });
    const api = new ApiClient("", impl);
    const dirs = await api.listDirections();
    expect(dirs).toHaveLength(1);
    expect(dirs[0].id).toBe(0);
  });

  it("submits the edit request body unchanged", async () => {
    const { impl, seen } = mockFetch({
      "/edits": () =>
        json({ image_id: "edit-1", image_url: "/images/edit-1", sidecar: {}, metrics: null }),
    });
    const api = new ApiClient("", impl);
    const request: EditRequest = {
      source: { seed: 3, image_id: null },
      edits: [{ direction_id: 1, scale: 1.5, window: [0.5, 0] }],
      return_metrics: false,
    };
    const res = await api.submitEdit(request);
    expect(res.image_id).toBe("edit-1");
    expect(seen[0].init?.method).toBe("POST");
    expect(JSON.parse(String(seen[0].init?.body))).toEqual(request);
  });

  it("throws ServiceError with status and detail", async () => {
    const { impl } = mockFetch({ "/edits": () => json({ detail: "unknown direction_id 44" }, 404) });
    const api = new ApiClient("", impl);
    await expect(
      api.submitEdit({ source: { seed: 0, image_id: null }, edits: [], return_metrics: false }),
    ).rejects.toThrowError(ServiceError);
  });

  it("builds image urls from ids and paths", () => {
    const api = new ApiClient("http://h:1");
    expect(api.imageUrl("abc")).toBe("http://h:1/images/abc");
    expect(api.imageUrl("/images/abc")).toBe("http://h:1/images/abc");
  });
});
