/**
 * Minimal frame decoding: binary PPM (P6) and PGM (P5), the formats a
 * frame-dumping step can emit without any codec, plus nearest-neighbour
 * resizing to the encoder's square input.
 */

export class ImageError extends Error {}

export interface RgbImage {
  width: number;
  height: number;
  /** Interleaved RGB, 8-bit. */
  data: Uint8Array;
}

function parseHeader(buf: Buffer): { magic: string; fields: number[]; offset: number } {
  // magic, whitespace-separated integers, single whitespace before payload;
  // '#' comments may appear between tokens
  const magic = buf.subarray(0, 2).toString('ascii');
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < buf.length && /\s/.test(String.fromCharCode(buf[pos]))) pos++;
    if (pos < buf.length && buf[pos] === 0x23) {
      while (pos < buf.length && buf[pos] !== 0x0a) pos++;
      continue;
    }
    let token = '';
    while (pos < buf.length && !/\s/.test(String.fromCharCode(buf[pos]))) {
      token += String.fromCharCode(buf[pos]);
      pos++;
    }
    if (!token) throw new ImageError('truncated header');
    const value = Number(token);
    if (!Number.isInteger(value)) throw new ImageError(`bad header token ${token}`);
    fields.push(value);
  }
  pos++; // single whitespace after maxval
  return { magic, fields, offset: pos };
}

export function decodeNetpbm(buf: Buffer): RgbImage {
  const { magic, fields, offset } = parseHeader(buf);
  const [width, height, maxval] = fields;
  if (maxval !== 255) throw new ImageError(`unsupported maxval ${maxval}`);
  if (width < 1 || height < 1) throw new ImageError(`bad extents ${width}x${height}`);
  const pixels = width * height;
  const data = new Uint8Array(pixels * 3);
  if (magic === 'P6') {
    if (buf.length < offset + pixels * 3) throw new ImageError('truncated pixel data');
    data.set(buf.subarray(offset, offset + pixels * 3));
  } else if (magic === 'P5') {
    if (buf.length < offset + pixels) throw new ImageError('truncated pixel data');
    for (let i = 0; i < pixels; i++) {
      const g = buf[offset + i];
      data[3 * i] = g;
      data[3 * i + 1] = g;
      data[3 * i + 2] = g;
    }
  } else {
    throw new ImageError(`unsupported image magic ${JSON.stringify(magic)}`);
  }
  return { width, height, data };
}

export function resize(img: RgbImage, side: number): RgbImage {
  if (img.width === side && img.height === side) return img;
  const out = new Uint8Array(side * side * 3);
  for (let y = 0; y < side; y++) {
    const sy = Math.min(img.height - 1, Math.floor((y * img.height) / side));
    for (let x = 0; x < side; x++) {
      const sx = Math.min(img.width - 1, Math.floor((x * img.width) / side));
      const src = 3 * (sy * img.width + sx);
      const dst = 3 * (y * side + x);
      out[dst] = img.data[src];
      out[dst + 1] = img.data[src + 1];
      out[dst + 2] = img.data[src + 2];
    }
  }
  return { width: side, height: side, data: out };
}
