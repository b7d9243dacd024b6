/**
 * DOM layer: wires the annotator store to canvases and controls. All
 * state transitions live in store.ts; this file only renders and routes
 * events.
 */

import { ApiClient, ServiceError } from "./api.js";
import {
  CATEGORY_NAMES,
  CATEGORY_ORDER,
  CATEGORY_RGB,
  LUNG_OUTLINE_RGB,
  type Category,
} from "./colors.js";
import { decodeWire } from "./rle.js";
import { AnnotatorStore, ScorePanel, fmt } from "./store.js";

const api = new ApiClient("");
const store = new AnnotatorStore(api);
const panel = new ScorePanel(api);

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

const imageCanvas = el<HTMLCanvasElement>("image-canvas");
const overlayCanvas = el<HTMLCanvasElement>("overlay-canvas");
const outlineCanvas = el<HTMLCanvasElement>("outline-canvas");
const statusLine = el<HTMLDivElement>("status-line");
const errorLine = el<HTMLDivElement>("error-line");
const sliceLabel = el<HTMLSpanElement>("slice-label");
const progress = el<HTMLDivElement>("progress");
const saveButton = el<HTMLButtonElement>("save-button");
const panelBody = el<HTMLDivElement>("score-panel");

let scale = 4;
let painting = false;
let outlinePixels: Uint8Array | null = null;

function setStatus(text: string): void {
  statusLine.textContent = text;
}

function showError(err: unknown): void {
  if (err instanceof ServiceError) {
    errorLine.textContent = `service error [${err.code}]: ${err.message}`;
  } else {
    errorLine.textContent = String(err);
  }
  errorLine.hidden = false;
}

function clearError(): void {
  errorLine.hidden = true;
}

function canvasSetup(nx: number, ny: number): void {
  scale = Math.max(1, Math.floor(560 / Math.max(nx, ny)));
  for (const canvas of [imageCanvas, overlayCanvas, outlineCanvas]) {
    canvas.width = nx * scale;
    canvas.height = ny * scale;
  }
}

async function drawImageLayer(): Promise<void> {
  if (!store.session) return;
  const url = api.sliceImageUrl(store.session.id, store.currentZ);
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("slice image failed to load"));
    img.src = url;
  });
  const ctx = imageCanvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, imageCanvas.width, imageCanvas.height);
  ctx.drawImage(img, 0, 0, imageCanvas.width, imageCanvas.height);
}

async function loadOutline(): Promise<void> {
  if (!store.session) return;
  const [nx, ny] = store.inPlaneDims;
  const doc = await api.getLungMask(store.session.id, store.currentZ);
  const lung = new Uint8Array(nx * ny);
  for (const wire of doc.rles) {
    const m = decodeWire(wire);
    for (let i = 0; i < m.pixels.length; i++) if (m.pixels[i]) lung[i] = 1;
  }
  // boundary = lung pixel with at least one 4-neighbour outside the lung
  outlinePixels = new Uint8Array(nx * ny);
  for (let y = 0; y < ny; y++) {
    for (let x = 0; x < nx; x++) {
      const i = y * nx + x;
      if (!lung[i]) continue;
      const open =
        x === 0 || y === 0 || x === nx - 1 || y === ny - 1 ||
        !lung[i - 1] || !lung[i + 1] || !lung[i - nx] || !lung[i + nx];
      if (open) outlinePixels[i] = 1;
    }
  }
  drawOutline();
}

function drawOutline(): void {
  if (!outlinePixels) return;
  const [nx, ny] = store.inPlaneDims;
  const ctx = outlineCanvas.getContext("2d")!;
  ctx.clearRect(0, 0, outlineCanvas.width, outlineCanvas.height);
  const [r, g, b] = LUNG_OUTLINE_RGB;
  ctx.fillStyle = `rgba(${r},${g},${b},0.9)`;
  for (let y = 0; y < ny; y++) {
    for (let x = 0; x < nx; x++) {
      if (outlinePixels[y * nx + x]) ctx.fillRect(x * scale, y * scale, scale, scale);
    }
  }
}

function drawOverlay(): void {
  if (!store.session) return;
  const [nx, ny] = store.inPlaneDims;
  const rgba = new Uint8ClampedArray(
    store.currentLayers.renderOverlay(store.brush.overlayOpacity));
  const off = document.createElement("canvas");
  off.width = nx;
  off.height = ny;
  off.getContext("2d")!.putImageData(new ImageData(rgba, nx, ny), 0, 0);
  const ctx = overlayCanvas.getContext("2d")!;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
  ctx.drawImage(off, 0, 0, overlayCanvas.width, overlayCanvas.height);
}

function drawProgress(): void {
  if (!store.session) return;
  progress.replaceChildren();
  store.slices.forEach((z, i) => {
    const dot = document.createElement("span");
    dot.className = "dot";
    if (store.isAnnotated(z)) dot.classList.add("done");
    if (z === store.currentZ) dot.classList.add("current");
    if (store.isDirty(z)) dot.classList.add("dirty");
    dot.title = `slice ${i + 1} (z=${z})`;
    dot.onclick = () => void openSlice(i);
    progress.appendChild(dot);
  });
  const { done, total } = store.completion;
  sliceLabel.textContent =
    `slice ${store.sliceNumber}/${store.slices.length} (z=${store.currentZ}) — saved ${done}/${total}`;
}

async function refreshSliceView(): Promise<void> {
  await Promise.all([drawImageLayer(), loadOutline()]);
  drawOverlay();
  drawProgress();
}

async function openSlice(index: number): Promise<void> {
  try {
    await store.goTo(index);
    await refreshSliceView();
  } catch (err) {
    showError(err);
  }
}

function pointerToImage(e: PointerEvent): [number, number] {
  const rect = overlayCanvas.getBoundingClientRect();
  const x = Math.floor((e.clientX - rect.left) / scale);
  const y = Math.floor((e.clientY - rect.top) / scale);
  return [x, y];
}

overlayCanvas.addEventListener("pointerdown", (e) => {
  if (!store.session) return;
  painting = true;
  overlayCanvas.setPointerCapture(e.pointerId);
  const [x, y] = pointerToImage(e);
  if (store.applyBrush(x, y) > 0) {
    drawOverlay();
    drawProgress();
  }
});

overlayCanvas.addEventListener("pointermove", (e) => {
  if (!painting || !store.session) return;
  const [x, y] = pointerToImage(e);
  if (store.applyBrush(x, y) > 0) {
    drawOverlay();
    drawProgress();
  }
});

overlayCanvas.addEventListener("pointerup", () => {
  painting = false;
});

function buildToolbar(): void {
  const holder = el<HTMLDivElement>("category-buttons");
  holder.replaceChildren();
  for (const cat of CATEGORY_ORDER) {
    const [r, g, b] = CATEGORY_RGB[cat];
    const btn = document.createElement("button");
    btn.textContent = `${cat} ${CATEGORY_NAMES[cat]}`;
    btn.style.borderColor = `rgb(${r},${g},${b})`;
    btn.className = "category";
    btn.onclick = () => {
      store.brush.activeCategory = cat;
      store.brush.mode = "paint";
      syncToolbar();
    };
    btn.dataset.category = String(cat);
    holder.appendChild(btn);
  }
}

function syncToolbar(): void {
  document.querySelectorAll<HTMLButtonElement>("button.category").forEach((btn) => {
    const active = Number(btn.dataset.category) === store.brush.activeCategory
      && store.brush.mode === "paint";
    btn.classList.toggle("active", active);
  });
  el<HTMLButtonElement>("erase-button").classList.toggle(
    "active", store.brush.mode === "erase");
  el<HTMLInputElement>("radius-input").value = String(store.brush.brushRadius);
  el<HTMLInputElement>("opacity-input").value = String(store.brush.overlayOpacity);
}

el<HTMLButtonElement>("erase-button").onclick = () => {
  store.brush.mode = store.brush.mode === "erase" ? "paint" : "erase";
  syncToolbar();
};

el<HTMLInputElement>("radius-input").oninput = (e) => {
  store.brush.brushRadius = Math.max(1, Number((e.target as HTMLInputElement).value));
};

el<HTMLInputElement>("opacity-input").oninput = (e) => {
  store.brush.overlayOpacity = Number((e.target as HTMLInputElement).value);
  drawOverlay();
};

saveButton.onclick = async () => {
  if (!store.session || !store.canSave(store.currentZ)) return;
  saveButton.disabled = true;
  clearError();
  try {
    const doc = await store.save();
    const n = Object.values(doc.pixel_counts).reduce((a, b) => a + b, 0);
    setStatus(`saved slice z=${doc.z}: ${n} annotated pixels`);
    drawProgress();
  } catch (err) {
    showError(err); // local edits stay in the layers
  } finally {
    saveButton.disabled = false;
  }
};

el<HTMLButtonElement>("prev-button").onclick = async () => {
  if (await store.prev()) await refreshSliceView();
};

el<HTMLButtonElement>("next-button").onclick = async () => {
  if (await store.next()) await refreshSliceView();
};

el<HTMLButtonElement>("finalize-button").onclick = async () => {
  if (!store.session) return;
  clearError();
  try {
    const cellEdgeRaw = el<HTMLInputElement>("cell-edge-input").value;
    const body: { cell_edge?: number } = {};
    if (cellEdgeRaw) body.cell_edge = Number(cellEdgeRaw);
    await store.finalize(body);
    setStatus("session finalized");
    await renderPanel();
  } catch (err) {
    showError(err);
  }
};

async function renderPanel(): Promise<void> {
  if (!store.session) return;
  await panel.refresh(store.session.id);
  if (panel.state !== "finalized" || !panel.report) {
    panelBody.innerHTML = "<em>scores appear here after finalize</em>";
    return;
  }
  const header = "<tr><th>category</th><th>pixel ratio</th><th>grid ratio</th>" +
    "<th>pixel mm³</th><th>grid mm³</th></tr>";
  const rows = panel.rows(CATEGORY_NAMES).map((r) =>
    `<tr><td>${r.label}</td><td>${r.pixelRatio}</td><td>${r.gridRatio}</td>` +
    `<td>${r.pixelVolumeMm3}</td><td>${r.gridVolumeMm3}</td></tr>`).join("");
  const grid = panel.report.grid.grid_params;
  const timing = panel.perSliceSeconds()
    .map((t) => `z=${t.z}: ${t.seconds}s`).join(", ");
  panelBody.innerHTML =
    `<table>${header}${rows}</table>` +
    `<p>grid cell_edge=${grid?.cell_edge}, tau=${grid?.tau}; ` +
    `total ${fmt(panel.report.timing.total_seconds, 4)}s` +
    (timing ? ` (${timing})` : "") + "</p>";
}

async function openSession(sessionId: string): Promise<void> {
  clearError();
  await store.open(sessionId);
  const [nx, ny] = store.inPlaneDims;
  canvasSetup(nx, ny);
  buildToolbar();
  syncToolbar();
  await refreshSliceView();
  await renderPanel();
  setStatus(`session ${sessionId} open (${store.session?.status})`);
}

el<HTMLButtonElement>("open-button").onclick = async () => {
  const id = el<HTMLInputElement>("session-input").value.trim();
  if (!id) return;
  try {
    await openSession(id);
  } catch (err) {
    showError(err);
  }
};

el<HTMLButtonElement>("create-button").onclick = async () => {
  clearError();
  const imageFile = el<HTMLInputElement>("image-file").files?.[0];
  const maskFile = el<HTMLInputElement>("mask-file").files?.[0];
  if (!imageFile) {
    showError(new Error("choose an image volume first"));
    return;
  }
  try {
    setStatus("uploading volumes...");
    const imageRef = await api.uploadVolume(await imageFile.arrayBuffer());
    const body: { image_ref: string; mask_ref?: string } = { image_ref: imageRef };
    if (maskFile) body.mask_ref = await api.uploadVolume(await maskFile.arrayBuffer());
    setStatus(maskFile ? "creating session..." : "creating session (segmenting server-side)...");
    const session = await api.createSession(body);
    el<HTMLInputElement>("session-input").value = session.id;
    await openSession(session.id);
  } catch (err) {
    showError(err);
  }
};

setStatus("upload a volume or open a session id");
