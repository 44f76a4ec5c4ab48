/**
 * Binary containers shared with the detection engine (all little-endian).
 *
 *   feature file  TOADFEAT | version u32 | fps f32 | N u32 | d u32 | N*d f32
 *   text file     TOADTEXT | version u32 | C u32 | d u32 | mode u8 | C*d f32
 */

export const FEATURE_MAGIC = 'TOADFEAT';
export const TEXT_MAGIC = 'TOADTEXT';
export const FORMAT_VERSION = 1;

export type TextMode = 'class_name' | 'prompt' | 'future_prompt';

export const TEXT_MODE_BYTES: Record<TextMode, number> = {
  class_name: 0,
  prompt: 1,
  future_prompt: 2,
};

export class FormatError extends Error {}

function writeF32Rows(buf: Buffer, offset: number, rows: Float32Array[]): number {
  for (const row of rows) {
    for (let i = 0; i < row.length; i++) {
      buf.writeFloatLE(row[i], offset);
      offset += 4;
    }
  }
  return offset;
}

export function encodeFeatures(fps: number, rows: Float32Array[]): Buffer {
  if (rows.length === 0) throw new FormatError('feature file needs at least one frame');
  const dim = rows[0].length;
  for (const [i, row] of rows.entries()) {
    if (row.length !== dim) {
      throw new FormatError(`frame ${i} has dim ${row.length}, expected ${dim}`);
    }
  }
  const buf = Buffer.alloc(8 + 4 + 4 + 4 + 4 + 4 * rows.length * dim);
  buf.write(FEATURE_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(FORMAT_VERSION, 8);
  buf.writeFloatLE(fps, 12);
  buf.writeUInt32LE(rows.length, 16);
  buf.writeUInt32LE(dim, 20);
  writeF32Rows(buf, 24, rows);
  return buf;
}

export function encodeTextEmbeddings(rows: Float32Array[], mode: TextMode): Buffer {
  if (rows.length === 0) throw new FormatError('text file needs at least one class');
  const dim = rows[0].length;
  const buf = Buffer.alloc(8 + 4 + 4 + 4 + 1 + 4 * rows.length * dim);
  buf.write(TEXT_MAGIC, 0, 'ascii');
  buf.writeUInt32LE(FORMAT_VERSION, 8);
  buf.writeUInt32LE(rows.length, 12);
  buf.writeUInt32LE(dim, 16);
  buf.writeUInt8(TEXT_MODE_BYTES[mode], 20);
  writeF32Rows(buf, 21, rows);
  return buf;
}

function expectMagic(buf: Buffer, magic: string): void {
  const found = buf.subarray(0, 8).toString('ascii');
  if (found !== magic) {
    throw new FormatError(`expected magic ${magic}, found ${JSON.stringify(found)}`);
  }
  const version = buf.readUInt32LE(8);
  if (version !== FORMAT_VERSION) {
    throw new FormatError(`unsupported container version ${version}`);
  }
}

function readF32Matrix(buf: Buffer, offset: number, n: number, dim: number): Float32Array {
  const need = offset + 4 * n * dim;
  if (buf.length < need) {
    throw new FormatError(`truncated payload: ${buf.length} bytes, expected ${need}`);
  }
  const out = new Float32Array(n * dim);
  for (let i = 0; i < out.length; i++) {
    out[i] = buf.readFloatLE(offset + 4 * i);
  }
  return out;
}

export interface FeatureFile {
  fps: number;
  frames: number;
  dim: number;
  data: Float32Array; // row-major frames x dim
}

export function decodeFeatures(buf: Buffer): FeatureFile {
  expectMagic(buf, FEATURE_MAGIC);
  const fps = buf.readFloatLE(12);
  const frames = buf.readUInt32LE(16);
  const dim = buf.readUInt32LE(20);
  return { fps, frames, dim, data: readF32Matrix(buf, 24, frames, dim) };
}

export interface TextFile {
  classes: number;
  dim: number;
  mode: TextMode;
  data: Float32Array;
}

export function decodeTextEmbeddings(buf: Buffer): TextFile {
  expectMagic(buf, TEXT_MAGIC);
  const classes = buf.readUInt32LE(12);
  const dim = buf.readUInt32LE(16);
  const modeByte = buf.readUInt8(20);
  const mode = (Object.keys(TEXT_MODE_BYTES) as TextMode[]).find(
    (m) => TEXT_MODE_BYTES[m] === modeByte,
  );
  if (!mode) throw new FormatError(`unknown mode byte ${modeByte}`);
  return { classes, dim, mode, data: readF32Matrix(buf, 21, classes, dim) };
}
