/**
 * Extraction jobs: frames -> TOADFEAT, vocabulary -> TOADTEXT.
 *
 * No downsampling happens here; the engine owns its sampling rate, so one
 * embedding is written per original frame. Prompt templates mirror the
 * engine's conventions, with line 0 of the vocabulary being background.
 */

import { readFileSync, readdirSync, statSync, writeFileSync } from 'node:fs';
import { join } from 'node:path';

import { Encoder, EncoderError, makeEncoder, type EncoderVariant } from './encoders.js';
import { decodeNetpbm, resize } from './image.js';
import { encodeFeatures, encodeTextEmbeddings, type TextMode } from './formats.js';

export class JobError extends Error {}

export const PROMPT_TEMPLATE = 'a video of a person {}';
export const FUTURE_TEMPLATE = 'a video of a person {} in the future';
export const BACKGROUND_PROMPT = 'a video of background';
export const BACKGROUND_FUTURE_PROMPT = 'a video of background in the future';

export interface VisualJob {
  /** Frame directory (.ppm/.pgm frames, sorted by name). */
  input: string;
  output: string;
  encoder: EncoderVariant;
  backend: 'hash' | 'transformers';
  fps: number;
  resizeTo: number;
}

const FRAME_EXTENSIONS = ['.ppm', '.pgm'];

export function listFrames(dir: string): string[] {
  const entries = readdirSync(dir)
    .filter((name) => FRAME_EXTENSIONS.some((ext) => name.toLowerCase().endsWith(ext)))
    .sort();
  return entries.map((name) => join(dir, name));
}

export async function extractVisual(job: VisualJob): Promise<{ frames: number; dim: number }> {
  const stats = statSync(job.input, { throwIfNoEntry: false });
  if (!stats) throw new JobError(`no such input: ${job.input}`);
  if (!stats.isDirectory()) {
    throw new JobError(
      `${job.input} is not a frame directory; decode the video to .ppm frames first`,
    );
  }
  const frames = listFrames(job.input);
  if (frames.length === 0) {
    throw new JobError(`${job.input} holds no .ppm/.pgm frames`);
  }
  const encoder = await makeEncoder(job.backend, job.encoder);
  const rows: Float32Array[] = [];
  for (const [index, path] of frames.entries()) {
    try {
      const image = resize(decodeNetpbm(readFileSync(path)), job.resizeTo);
      rows.push(await encoder.encodeImage(image));
    } catch (err) {
      throw new JobError(`frame ${index} (${path}): ${(err as Error).message}`);
    }
  }
  writeFileSync(job.output, encodeFeatures(job.fps, rows));
  return { frames: rows.length, dim: encoder.dim };
}

export function promptFor(name: string, index: number, mode: TextMode): string {
  if (mode === 'class_name') return index === 0 ? 'background' : name;
  if (mode === 'prompt') {
    return index === 0 ? BACKGROUND_PROMPT : PROMPT_TEMPLATE.replace('{}', name);
  }
  return index === 0 ? BACKGROUND_FUTURE_PROMPT : FUTURE_TEMPLATE.replace('{}', name);
}

export interface TextJob {
  vocab: string;
  output: string;
  mode: TextMode;
  encoder: EncoderVariant;
  backend: 'hash' | 'transformers';
}

export function readVocab(path: string): string[] {
  const names = readFileSync(path, 'utf-8').split('\n').filter((line) => line.length > 0);
  if (names.length === 0) throw new JobError(`${path}: empty vocabulary`);
  names.forEach((name, i) => {
    if (!name.trim()) throw new JobError(`${path}: empty class name at line ${i}`);
  });
  return names;
}

export async function extractText(job: TextJob): Promise<{ classes: number; dim: number }> {
  const names = readVocab(job.vocab);
  const encoder = await makeEncoder(job.backend, job.encoder);
  const rows: Float32Array[] = [];
  for (const [index, name] of names.entries()) {
    try {
      rows.push(await encoder.encodeText(promptFor(name, index, job.mode)));
    } catch (err) {
      throw new JobError(`class ${index} (${name}): ${(err as Error).message}`);
    }
  }
  writeFileSync(job.output, encodeTextEmbeddings(rows, job.mode));
  return { classes: rows.length, dim: encoder.dim };
}

export type { Encoder, EncoderVariant, TextMode };
export { EncoderError };
