import { describe, expect, it } from "vitest";

import type { AnnotationDoc, ApiClient, SessionDoc } from "../src/api.js";
import { ServiceError } from "../src/api.js";
import { AnnotatorStore, ScorePanel, fmt } from "../src/store.js";

/** In-memory stand-in for the service, shaped like ApiClient. */
class FakeApi {
  annotations = new Map<number, AnnotationDoc>();
  failNextPut: ServiceError | null = null;
  finalized = false;
  report = {
    session_id: "s1",
    pixel: {
      mode: "pixel",
      per_category_ratio: { "1": 0.05, "2": 0.025, "3": 0 },
      total_ratio: 0.075,
      per_category_volume_mm3: { "1": 10, "2": 5, "3": 0 },
      sampled_lung_volume_mm3: 200,
      slices_used: [2, 5, 8],
      clip_to_lung: true,
      grid_params: null,
    },
    grid: {
      mode: "grid",
      per_category_ratio: { "1": 0.1, "2": 0.05, "3": 0 },
      total_ratio: 0.15,
      per_category_volume_mm3: { "1": 16, "2": 8, "3": 0 },
      sampled_lung_volume_mm3: 160,
      slices_used: [2, 5, 8],
      clip_to_lung: true,
      grid_params: { cell_edge: 2, tau: 0.5 },
    },
    timing: { setup_seconds: 1.5, per_slice_seconds: { "2": 3.25 }, total_seconds: 4.75 },
  };

  async getSession(id: string): Promise<SessionDoc> {
    const slices = [2, 5, 8].map((z) => ({
      z,
      annotated: this.annotations.has(z),
      pixel_counts: { "1": 0, "2": 0, "3": 0 },
    }));
    return {
      id,
      status: this.finalized ? "finalized" : "annotating",
      created_at: 0,
      image_ref: "img",
      mask_ref: "msk",
      mask_source: "external_file",
      dims: [16, 12, 10],
      spacing: [1, 1, 1],
      value_range: [0, 200],
      k: 3,
      flip_lr: false,
      plan: { z_min: 2, z_max: 8, k_requested: 3, slices: [2, 5, 8], short_extent: false },
      slices,
      completion: { done: slices.filter((s) => s.annotated).length, total: 3 },
    } as SessionDoc;
  }

  async getAnnotation(_id: string, z: number): Promise<AnnotationDoc> {
    return (
      this.annotations.get(z) ?? { z, rles: [], pixel_counts: { "1": 0, "2": 0, "3": 0 } }
    );
  }

  async putAnnotation(_id: string, z: number, rles: string[]): Promise<AnnotationDoc> {
    if (this.failNextPut) {
      const err = this.failNextPut;
      this.failNextPut = null;
      throw err;
    }
    const doc = { z, rles, pixel_counts: { "1": 0, "2": 0, "3": 0 } };
    this.annotations.set(z, doc);
    return doc;
  }

  async finalize(): Promise<typeof this.report> {
    this.finalized = true;
    return this.report;
  }

  async getReport(): Promise<typeof this.report> {
    return this.report;
  }
}

function storeWith(api: FakeApi): AnnotatorStore {
  return new AnnotatorStore(api as unknown as ApiClient);
}

describe("AnnotatorStore", () => {
  it("opens at the first sampled slice and navigates in plan order", async () => {
    const store = storeWith(new FakeApi());
    await store.open("s1");
    expect(store.currentZ).toBe(2);
    expect(await store.next()).toBe(true);
    expect(store.currentZ).toBe(5);
    expect(await store.next()).toBe(true);
    expect(store.currentZ).toBe(8);
    expect(await store.next()).toBe(false); // stays on the last slice
    expect(await store.prev()).toBe(true);
    expect(store.currentZ).toBe(5);
  });

  it("paints with the active brush and tracks dirtiness", async () => {
    const store = storeWith(new FakeApi());
    await store.open("s1");
    store.brush.activeCategory = 2;
    store.brush.brushRadius = 1;
    expect(store.isDirty(2)).toBe(false);
    expect(store.applyBrush(4, 4)).toBe(1);
    expect(store.isDirty(2)).toBe(true);
    expect(store.currentLayers.count(2)).toBe(1);
  });

  it("save pushes wires, refreshes completion and clears dirtiness", async () => {
    const api = new FakeApi();
    const store = storeWith(api);
    await store.open("s1");
    store.applyBrush(3, 3);
    await store.save();
    expect(store.isDirty(2)).toBe(false);
    expect(store.completion).toEqual({ done: 1, total: 3 });
    expect(api.annotations.get(2)?.rles[0].startsWith("16,12,1;")).toBe(true);
  });

  it("a rejected save keeps the local edits and surfaces the error", async () => {
    const api = new FakeApi();
    api.failNextPut = new ServiceError("conflict", "session is finalized", 409);
    const store = storeWith(api);
    await store.open("s1");
    store.applyBrush(3, 3);
    const before = store.currentLayers.count(1);
    await expect(store.save()).rejects.toThrow("finalized");
    expect(store.lastError?.code).toBe("conflict");
    expect(store.currentLayers.count(1)).toBe(before); // edits intact
    expect(store.isDirty(2)).toBe(true);
  });

  it("reload renders the saved pixel set (round trip through the api)", async () => {
    const api = new FakeApi();
    const store = storeWith(api);
    await store.open("s1");
    store.brush.activeCategory = 3;
    store.applyBrush(5, 5);
    const saved = Array.from(store.currentLayers.layer(3));
    await store.save();

    const fresh = storeWith(api);
    await fresh.open("s1");
    expect(Array.from(fresh.currentLayers.layer(3))).toEqual(saved);
  });

  it("finalize flips status and blocks further finalizing", async () => {
    const api = new FakeApi();
    const store = storeWith(api);
    await store.open("s1");
    expect(store.finalizable).toBe(true);
    await store.finalize({ cell_edge: 2 });
    expect(store.finalizable).toBe(false);
  });
});

describe("ScorePanel", () => {
  it("reports in-progress before finalize", async () => {
    const api = new FakeApi();
    const panel = new ScorePanel(api as unknown as ApiClient);
    await panel.refresh("s1");
    expect(panel.state).toBe("in_progress");
    expect(panel.rows({})).toEqual([]);
  });

  it("renders service numbers verbatim after finalize", async () => {
    const api = new FakeApi();
    api.finalized = true;
    const panel = new ScorePanel(api as unknown as ApiClient);
    await panel.refresh("s1");
    expect(panel.state).toBe("finalized");
    const rows = panel.rows({ 1: "cat1", 2: "cat2", 3: "cat3" });
    expect(rows[0]).toEqual({
      label: "cat1",
      pixelRatio: "0.05",
      gridRatio: "0.1",
      pixelVolumeMm3: "10",
      gridVolumeMm3: "16",
    });
    expect(rows[3].label).toBe("total");
    expect(rows[3].pixelRatio).toBe("0.075");
    expect(panel.perSliceSeconds()).toEqual([{ z: "2", seconds: "3.25" }]);
  });
});

describe("fmt", () => {
  it("matches the CLI's 6-significant-digit style", () => {
    expect(fmt(0.009202453987730062)).toBe("0.00920245");
    expect(fmt(1)).toBe("1");
    expect(fmt(0)).toBe("0");
    expect(fmt(11122.3456789)).toBe("11122.3");
  });
});
