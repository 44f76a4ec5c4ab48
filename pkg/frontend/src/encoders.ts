/**
 * Embedding backends behind one interface.
 *
 * The default "hash" backend is fully offline and deterministic: text is a
 * hashed bag of tokens, frames are hashed projections of patch means. It
 * preserves the geometry the engine relies on (shared tokens raise cosine,
 * identical frames embed identically) without model weights. The
 * "transformers" backend lazily loads @xenova/transformers when installed
 * and runs a real pretrained vision-language encoder.
 */

import type { RgbImage } from './image.js';

export type EncoderVariant = 'RN101' | 'B/32' | 'B/16' | 'L/14';

export const ENCODER_WIDTHS: Record<EncoderVariant, number> = {
  RN101: 512,
  'B/32': 512,
  'B/16': 512,
  'L/14': 768,
};

export class EncoderError extends Error {}

export interface Encoder {
  readonly dim: number;
  encodeText(text: string): Promise<Float32Array>;
  encodeImage(img: RgbImage): Promise<Float32Array>;
}

export function normalize(vec: Float32Array): Float32Array {
  let sum = 0;
  for (const v of vec) sum += v * v;
  if (sum === 0) throw new EncoderError('cannot normalize a zero embedding');
  const inv = 1 / Math.sqrt(sum);
  const out = new Float32Array(vec.length);
  for (let i = 0; i < vec.length; i++) out[i] = vec[i] * inv;
  return out;
}

function fnv1a(text: string): number {
  let h = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i);
    h = Math.imul(h, 0x01000193) >>> 0;
  }
  // FNV's low bits are linear in character parities; avalanche them
  h ^= h >>> 16;
  h = Math.imul(h, 0x7feb352d) >>> 0;
  h ^= h >>> 15;
  h = Math.imul(h, 0x846ca68b) >>> 0;
  h ^= h >>> 16;
  return h >>> 0;
}

const PATCH_GRID = 14;

export class HashEncoder implements Encoder {
  readonly dim: number;
  private projection: Float32Array | null = null;

  constructor(variant: EncoderVariant) {
    this.dim = ENCODER_WIDTHS[variant];
  }

  tokenize(text: string): string[] {
    return text.toLowerCase().split(/[^a-z0-9]+/).filter(Boolean);
  }

  async encodeText(text: string): Promise<Float32Array> {
    const tokens = this.tokenize(text);
    if (tokens.length === 0) throw new EncoderError(`no tokens in ${JSON.stringify(text)}`);
    const vec = new Float32Array(this.dim);
    for (const token of tokens) {
      const index = fnv1a(`i:${token}`) % this.dim;
      const sign = fnv1a(`s:${token}`) & 1 ? 1 : -1;
      vec[index] += sign;
    }
    return normalize(vec);
  }

  /** Fixed +-1 projection from patch-channel means into the embedding. */
  private projectionMatrix(): Float32Array {
    if (!this.projection) {
      const cells = PATCH_GRID * PATCH_GRID * 3;
      const proj = new Float32Array(cells * this.dim);
      for (let c = 0; c < cells; c++) {
        for (let k = 0; k < this.dim; k++) {
          proj[c * this.dim + k] = fnv1a(`p:${c}:${k}`) & 1 ? 1 : -1;
        }
      }
      this.projection = proj;
    }
    return this.projection;
  }

  async encodeImage(img: RgbImage): Promise<Float32Array> {
    const side = img.width;
    if (img.height !== side || side % PATCH_GRID !== 0) {
      throw new EncoderError(
        `expected a square image divisible by ${PATCH_GRID}, got ${img.width}x${img.height}`,
      );
    }
    const patch = side / PATCH_GRID;
    const cells = PATCH_GRID * PATCH_GRID * 3;
    const means = new Float32Array(cells);
    for (let py = 0; py < PATCH_GRID; py++) {
      for (let px = 0; px < PATCH_GRID; px++) {
        const sums = [0, 0, 0];
        for (let y = py * patch; y < (py + 1) * patch; y++) {
          for (let x = px * patch; x < (px + 1) * patch; x++) {
            const at = 3 * (y * side + x);
            sums[0] += img.data[at];
            sums[1] += img.data[at + 1];
            sums[2] += img.data[at + 2];
          }
        }
        const base = 3 * (py * PATCH_GRID + px);
        for (let ch = 0; ch < 3; ch++) {
          means[base + ch] = sums[ch] / (patch * patch * 255);
        }
      }
    }
    const proj = this.projectionMatrix();
    const vec = new Float32Array(this.dim);
    for (let c = 0; c < cells; c++) {
      const m = means[c];
      if (m === 0) continue;
      const row = c * this.dim;
      for (let k = 0; k < this.dim; k++) vec[k] += proj[row + k] * m;
    }
    return normalize(vec);
  }
}

/** Real pretrained backend; requires the optional @xenova/transformers dep. */
export async function loadTransformersEncoder(variant: EncoderVariant): Promise<Encoder> {
  const models: Record<EncoderVariant, string> = {
    RN101: 'Xenova/clip-vit-base-patch32',
    'B/32': 'Xenova/clip-vit-base-patch32',
    'B/16': 'Xenova/clip-vit-base-patch16',
    'L/14': 'Xenova/clip-vit-large-patch14',
  };
  let transformers: any;
  try {
    // optional peer dependency, resolved only at runtime
    transformers = await import('@xenova/transformers' as string);
  } catch {
    throw new EncoderError(
      'backend "transformers" needs the optional @xenova/transformers package; '
      + 'install it or use --backend hash',
    );
  }
  const { AutoTokenizer, CLIPTextModelWithProjection, RawImage, AutoProcessor,
          CLIPVisionModelWithProjection } = transformers;
  const model = models[variant];
  const tokenizer = await AutoTokenizer.from_pretrained(model);
  const textModel = await CLIPTextModelWithProjection.from_pretrained(model);
  const processor = await AutoProcessor.from_pretrained(model);
  const visionModel = await CLIPVisionModelWithProjection.from_pretrained(model);
  const dim = ENCODER_WIDTHS[variant];
  return {
    dim,
    async encodeText(text: string): Promise<Float32Array> {
      const inputs = tokenizer([text], { padding: true, truncation: true });
      const { text_embeds } = await textModel(inputs);
      return normalize(Float32Array.from(text_embeds.data.slice(0, dim)));
    },
    async encodeImage(img: RgbImage): Promise<Float32Array> {
      const raw = new RawImage(img.data, img.width, img.height, 3);
      const inputs = await processor(raw);
      const { image_embeds } = await visionModel(inputs);
      return normalize(Float32Array.from(image_embeds.data.slice(0, dim)));
    },
  };
}

export async function makeEncoder(
  backend: 'hash' | 'transformers',
  variant: EncoderVariant,
): Promise<Encoder> {
  if (backend === 'hash') return new HashEncoder(variant);
  return loadTransformersEncoder(variant);
}
