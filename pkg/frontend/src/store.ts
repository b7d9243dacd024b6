/**
 * DOM-free annotator state: slice navigation, local paint layers, the save
 * flow and the score panel. All numbers displayed by the panel come from
 * the service; nothing is scored client-side.
 */

import {
  ApiClient,
  ServiceError,
  type AnnotationDoc,
  type Report,
  type SessionDoc,
} from "./api.js";
import { CategoryLayers, defaultBrush, type BrushState } from "./masklayer.js";

export class AnnotatorStore {
  session: SessionDoc | null = null;
  brush: BrushState = defaultBrush();
  lastError: ServiceError | null = null;

  private currentIndex = 0;
  private layersBySlice = new Map<number, CategoryLayers>();
  private dirtySlices = new Set<number>();
  private savesInFlight = new Set<number>();

  constructor(private readonly api: ApiClient) {}

  async open(sessionId: string): Promise<void> {
    this.session = await this.api.getSession(sessionId);
    this.currentIndex = 0;
    this.layersBySlice.clear();
    this.dirtySlices.clear();
    await this.ensureLayers(this.currentZ);
  }

  private get doc(): SessionDoc {
    if (!this.session) throw new Error("no session open");
    return this.session;
  }

  get slices(): number[] {
    return this.doc.plan.slices;
  }

  get currentZ(): number {
    return this.slices[this.currentIndex];
  }

  get sliceNumber(): number {
    return this.currentIndex + 1;
  }

  get completion(): { done: number; total: number } {
    return this.doc.completion;
  }

  get inPlaneDims(): [number, number] {
    const [nx, ny] = this.doc.dims;
    return [nx, ny];
  }

  isAnnotated(z: number): boolean {
    return this.doc.slices.some((s) => s.z === z && s.annotated);
  }

  isDirty(z: number): boolean {
    return this.dirtySlices.has(z);
  }

  canSave(z: number): boolean {
    return !this.savesInFlight.has(z);
  }

  /** Lazily pull the stored annotation so reloads render the saved pixels. */
  async ensureLayers(z: number): Promise<CategoryLayers> {
    let layers = this.layersBySlice.get(z);
    if (!layers) {
      const [nx, ny] = this.inPlaneDims;
      const doc = await this.api.getAnnotation(this.doc.id, z);
      layers = CategoryLayers.fromWires(nx, ny, doc.rles);
      this.layersBySlice.set(z, layers);
    }
    return layers;
  }

  layersFor(z: number): CategoryLayers {
    const layers = this.layersBySlice.get(z);
    if (!layers) throw new Error(`slice ${z} not loaded`);
    return layers;
  }

  get currentLayers(): CategoryLayers {
    return this.layersFor(this.currentZ);
  }

  /** Apply the active brush at image coordinates; returns pixels changed. */
  applyBrush(x: number, y: number): number {
    const changed = this.currentLayers.applyBrush(this.brush, x, y);
    if (changed > 0) this.dirtySlices.add(this.currentZ);
    return changed;
  }

  /**
   * Save the slice's layers. Saves are serialized per slice; a rejection
   * keeps the local edits and surfaces the structured error.
   */
  async save(z: number = this.currentZ): Promise<AnnotationDoc> {
    if (!this.canSave(z)) throw new Error(`save already in flight for slice ${z}`);
    const layers = this.layersFor(z);
    this.savesInFlight.add(z);
    try {
      const doc = await this.api.putAnnotation(this.doc.id, z, layers.toWires());
      this.dirtySlices.delete(z);
      this.lastError = null;
      this.session = await this.api.getSession(this.doc.id); // refresh completion
      return doc;
    } catch (err) {
      if (err instanceof ServiceError) this.lastError = err;
      throw err;
    } finally {
      this.savesInFlight.delete(z);
    }
  }

  async next(): Promise<boolean> {
    if (this.currentIndex + 1 >= this.slices.length) return false;
    this.currentIndex++;
    await this.ensureLayers(this.currentZ);
    return true;
  }

  async prev(): Promise<boolean> {
    if (this.currentIndex === 0) return false;
    this.currentIndex--;
    await this.ensureLayers(this.currentZ);
    return true;
  }

  async goTo(index: number): Promise<void> {
    if (index < 0 || index >= this.slices.length) throw new Error(`no slice #${index}`);
    this.currentIndex = index;
    await this.ensureLayers(this.currentZ);
  }

  get finalizable(): boolean {
    return this.doc.status === "annotating";
  }

  async finalize(params: { cell_edge?: number; tau?: number } = {}): Promise<Report> {
    const report = await this.api.finalize(this.doc.id, params);
    this.session = await this.api.getSession(this.doc.id);
    return report;
  }
}

export type PanelState = "in_progress" | "finalized";

export interface PanelRow {
  label: string;
  pixelRatio: string;
  gridRatio: string;
  pixelVolumeMm3: string;
  gridVolumeMm3: string;
}

/** Format like the CLI's default: 6 significant digits, '.' decimals. */
export function fmt(x: number, digits = 6): string {
  if (!Number.isFinite(x)) return String(x);
  if (x === 0) return "0";
  return String(Number(x.toPrecision(digits)));
}

export class ScorePanel {
  state: PanelState = "in_progress";
  report: Report | null = null;

  constructor(private readonly api: ApiClient) {}

  async refresh(sessionId: string): Promise<void> {
    const session = await this.api.getSession(sessionId);
    if (session.status !== "finalized") {
      this.state = "in_progress";
      this.report = null;
      return;
    }
    this.report = await this.api.getReport(sessionId);
    this.state = "finalized";
  }

  rows(names: Record<number, string>): PanelRow[] {
    if (!this.report) return [];
    const { pixel, grid } = this.report;
    const rows: PanelRow[] = [1, 2, 3].map((c) => ({
      label: names[c] ?? `category ${c}`,
      pixelRatio: fmt(pixel.per_category_ratio[String(c)]),
      gridRatio: fmt(grid.per_category_ratio[String(c)]),
      pixelVolumeMm3: fmt(pixel.per_category_volume_mm3[String(c)]),
      gridVolumeMm3: fmt(grid.per_category_volume_mm3[String(c)]),
    }));
    rows.push({
      label: "total",
      pixelRatio: fmt(pixel.total_ratio),
      gridRatio: fmt(grid.total_ratio),
      pixelVolumeMm3: fmt(pixel.sampled_lung_volume_mm3),
      gridVolumeMm3: fmt(grid.sampled_lung_volume_mm3),
    });
    return rows;
  }

  perSliceSeconds(): Array<{ z: string; seconds: string }> {
    if (!this.report) return [];
    return Object.entries(this.report.timing.per_slice_seconds)
      .sort(([a], [b]) => Number(a) - Number(b))
      .map(([z, s]) => ({ z, seconds: fmt(s, 4) }));
  }
}
