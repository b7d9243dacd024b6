/**
 * Run-length codec for binary slice masks, mirroring the service wire form:
 * "width,height,category;start:len,start:len,..." over the flattened
 * x-fastest pixel space (flat = y * width + x). An empty mask ends right
 * after the semicolon.
 */

export interface DecodedMask {
  width: number;
  height: number;
  category: number;
  pixels: Uint8Array; // flat, 0/1
}

export class RleError extends Error {}

/** Maximal sorted runs over the nonzero entries of a flat 0/1 buffer. */
export function encodeRuns(pixels: Uint8Array): Array<[number, number]> {
  const runs: Array<[number, number]> = [];
  let start = -1;
  for (let i = 0; i < pixels.length; i++) {
    if (pixels[i] !== 0) {
      if (start < 0) start = i;
    } else if (start >= 0) {
      runs.push([start, i - start]);
      start = -1;
    }
  }
  if (start >= 0) runs.push([start, pixels.length - start]);
  return runs;
}

export function encodeWire(
  pixels: Uint8Array,
  width: number,
  height: number,
  category: number,
): string {
  if (pixels.length !== width * height) {
    throw new RleError(`buffer length ${pixels.length} != ${width}x${height}`);
  }
  const runs = encodeRuns(pixels);
  const body = runs.map(([s, n]) => `${s}:${n}`).join(",");
  return `${width},${height},${category};${body}`;
}

export function decodeWire(text: string): DecodedMask {
  const sep = text.indexOf(";");
  if (sep < 0) throw new RleError("missing ';' separator");
  const head = text.slice(0, sep).split(",");
  if (head.length !== 3) throw new RleError(`header must be width,height,category: ${text}`);
  const [width, height, category] = head.map((v) => {
    const n = Number(v);
    if (!Number.isInteger(n)) throw new RleError(`non-integer header field ${v}`);
    return n;
  });
  if (width < 1 || height < 1) throw new RleError(`bad plane dims ${width}x${height}`);
  const pixels = new Uint8Array(width * height);
  const body = text.slice(sep + 1);
  if (body.length > 0) {
    let prevEnd = -1;
    for (const token of body.split(",")) {
      const colon = token.indexOf(":");
      if (colon < 0) throw new RleError(`run token must be start:len, got ${token}`);
      const start = Number(token.slice(0, colon));
      const len = Number(token.slice(colon + 1));
      if (!Number.isInteger(start) || !Number.isInteger(len) || len < 1 || start < 0) {
        throw new RleError(`malformed run ${token}`);
      }
      if (start <= prevEnd) throw new RleError(`runs overlap or touch at ${start}`);
      if (start + len > pixels.length) throw new RleError(`run ${token} exceeds plane`);
      pixels.fill(1, start, start + len);
      prevEnd = start + len;
    }
  }
  return { width, height, category, pixels };
}

export function countPixels(pixels: Uint8Array): number {
  let n = 0;
  for (let i = 0; i < pixels.length; i++) if (pixels[i] !== 0) n++;
  return n;
}
