/**
 * Per-category binary paint layers for one slice.
 *
 * Layers stay independent client-side (painting touches only the active
 * category, erasing clears every category); the server applies the
 * precedence merge. Buffers are flat x-fastest (flat = y * width + x),
 * matching both the RLE wire form and canvas ImageData ordering.
 */

import { CATEGORY_ORDER, CATEGORY_RGB, type Category } from "./colors.js";
import { countPixels, decodeWire, encodeWire } from "./rle.js";

export type BrushMode = "paint" | "erase";

export interface BrushState {
  activeCategory: Category;
  brushRadius: number; // pixels, >= 1; radius 1 is a single pixel
  mode: BrushMode;
  overlayOpacity: number; // 0..1
}

export function defaultBrush(): BrushState {
  return { activeCategory: 1, brushRadius: 3, mode: "paint", overlayOpacity: 0.5 };
}

export class CategoryLayers {
  readonly width: number;
  readonly height: number;
  private readonly layers: Record<Category, Uint8Array>;

  constructor(width: number, height: number) {
    if (width < 1 || height < 1) throw new Error(`bad plane dims ${width}x${height}`);
    this.width = width;
    this.height = height;
    this.layers = {
      1: new Uint8Array(width * height),
      2: new Uint8Array(width * height),
      3: new Uint8Array(width * height),
    };
  }

  static fromWires(width: number, height: number, wires: string[]): CategoryLayers {
    const out = new CategoryLayers(width, height);
    for (const wire of wires) {
      const decoded = decodeWire(wire);
      if (decoded.width !== width || decoded.height !== height) {
        throw new Error(
          `wire dims ${decoded.width}x${decoded.height} do not match ${width}x${height}`,
        );
      }
      const cat = decoded.category as Category;
      if (!CATEGORY_ORDER.includes(cat)) throw new Error(`unknown category ${decoded.category}`);
      out.layers[cat] = decoded.pixels;
    }
    return out;
  }

  layer(category: Category): Uint8Array {
    return this.layers[category];
  }

  /** Visit integer pixels with dx^2 + dy^2 < r^2, clipped to the plane. */
  private disc(cx: number, cy: number, radius: number, visit: (flat: number) => void): void {
    const r = Math.max(1, radius);
    const r2 = r * r;
    const x0 = Math.max(0, Math.ceil(cx - r));
    const x1 = Math.min(this.width - 1, Math.floor(cx + r));
    const y0 = Math.max(0, Math.ceil(cy - r));
    const y1 = Math.min(this.height - 1, Math.floor(cy + r));
    for (let y = y0; y <= y1; y++) {
      const dy = y - cy;
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        if (dx * dx + dy * dy < r2) visit(y * this.width + x);
      }
    }
  }

  /** Paint the active category only; returns pixels newly set. */
  paintDisc(category: Category, cx: number, cy: number, radius: number): number {
    const buf = this.layers[category];
    let changed = 0;
    this.disc(cx, cy, radius, (i) => {
      if (buf[i] === 0) {
        buf[i] = 1;
        changed++;
      }
    });
    return changed;
  }

  /** Erase clears every category under the brush; returns pixels cleared. */
  eraseDisc(cx: number, cy: number, radius: number): number {
    let changed = 0;
    this.disc(cx, cy, radius, (i) => {
      for (const cat of CATEGORY_ORDER) {
        if (this.layers[cat][i] !== 0) {
          this.layers[cat][i] = 0;
          changed++;
        }
      }
    });
    return changed;
  }

  applyBrush(brush: BrushState, x: number, y: number): number {
    if (brush.mode === "erase") return this.eraseDisc(x, y, brush.brushRadius);
    return this.paintDisc(brush.activeCategory, x, y, brush.brushRadius);
  }

  count(category: Category): number {
    return countPixels(this.layers[category]);
  }

  /** Distinct annotated pixels across categories (server-merge view). */
  unionCount(): number {
    let n = 0;
    const { 1: a, 2: b, 3: c } = this.layers;
    for (let i = 0; i < a.length; i++) if (a[i] | b[i] | c[i]) n++;
    return n;
  }

  clear(): void {
    for (const cat of CATEGORY_ORDER) this.layers[cat].fill(0);
  }

  isEmpty(): boolean {
    return this.unionCount() === 0;
  }

  /** Wire strings for the nonempty layers, ascending category order. */
  toWires(): string[] {
    const wires: string[] = [];
    for (const cat of CATEGORY_ORDER) {
      if (this.count(cat) > 0) {
        wires.push(encodeWire(this.layers[cat], this.width, this.height, cat));
      }
    }
    return wires;
  }

  /**
   * RGBA overlay with the server's precedence (category 1 covers 2 covers 3)
   * so what the annotator sees is what the scorer will count.
   */
  renderOverlay(opacity: number): Uint8ClampedArray {
    const rgba = new Uint8ClampedArray(this.width * this.height * 4);
    const alpha = Math.round(255 * Math.min(1, Math.max(0, opacity)));
    for (const cat of [...CATEGORY_ORDER].reverse()) {
      const [r, g, b] = CATEGORY_RGB[cat];
      const buf = this.layers[cat];
      for (let i = 0; i < buf.length; i++) {
        if (buf[i] !== 0) {
          const o = i * 4;
          rgba[o] = r;
          rgba[o + 1] = g;
          rgba[o + 2] = b;
          rgba[o + 3] = alpha;
        }
      }
    }
    return rgba;
  }
}
