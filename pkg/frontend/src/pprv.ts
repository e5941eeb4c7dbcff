/** Decoder for the pipeline's PPRV raw-video container, so overlay
 * streams play in a canvas without any codec. Layout: "PPRV" magic,
 * u32 version, u32 width, u32 height, f64 fps, u32 frame count (all
 * little-endian), then frame-count blocks of raw RGB24. */

export interface RawVideo {
  width: number;
  height: number;
  fps: number;
  frameCount: number;
  frames: Uint8Array[]; // RGB24, row-major
}

const HEADER_BYTES = 4 + 4 + 4 + 4 + 8 + 4;

export function decodePPRV(buffer: ArrayBuffer): RawVideo {
  const view = new DataView(buffer);
  if (buffer.byteLength < HEADER_BYTES) {
    throw new Error("raw video shorter than its header");
  }
  const magic = new Uint8Array(buffer, 0, 4);
  if (String.fromCharCode(...magic) !== "PPRV") {
    throw new Error("bad raw video magic");
  }
  const version = view.getUint32(4, true);
  if (version !== 1) {
    throw new Error(`unsupported raw video version ${version}`);
  }
  const width = view.getUint32(8, true);
  const height = view.getUint32(12, true);
  const fps = view.getFloat64(16, true);
  const frameCount = view.getUint32(24, true);
  const frameBytes = width * height * 3;
  if (buffer.byteLength !== HEADER_BYTES + frameCount * frameBytes) {
    throw new Error("raw video payload truncated");
  }
  const frames: Uint8Array[] = [];
  for (let i = 0; i < frameCount; i++) {
    frames.push(
      new Uint8Array(buffer, HEADER_BYTES + i * frameBytes, frameBytes),
    );
  }
  return { width, height, fps, frameCount, frames };
}

/** Expand one RGB24 frame into RGBA pixels for ImageData. */
export function frameToRGBA(frame: Uint8Array, rgba: Uint8ClampedArray): void {
  const pixels = frame.length / 3;
  for (let p = 0; p < pixels; p++) {
    rgba[4 * p] = frame[3 * p];
    rgba[4 * p + 1] = frame[3 * p + 1];
    rgba[4 * p + 2] = frame[3 * p + 2];
    rgba[4 * p + 3] = 255;
  }
}
