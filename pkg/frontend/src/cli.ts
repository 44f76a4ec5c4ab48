#!/usr/bin/env node
/**
 * toad-extract: encode frames or class vocabularies into the engine's
 * binary containers.
 *
 *   toad-extract visual --input frames/ --output video.feat [--encoder L/14]
 *                       [--fps 30] [--resize 224] [--backend hash]
 *   toad-extract text   --vocab vocab.txt --output text.emb --mode prompt
 *                       [--encoder L/14] [--backend hash]
 *
 * Exit codes: 0 ok, 2 usage/configuration, 3 input data problems.
 */

import { parseArgs } from 'node:util';

import { ENCODER_WIDTHS, EncoderError, type EncoderVariant } from './encoders.js';
import { extractText, extractVisual, JobError } from './extract.js';
import { FormatError, TEXT_MODE_BYTES, type TextMode } from './formats.js';
import { ImageError } from './image.js';

class UsageError extends Error {}

function parseVariant(raw: string): EncoderVariant {
  if (raw in ENCODER_WIDTHS) return raw as EncoderVariant;
  throw new UsageError(
    `unknown encoder ${JSON.stringify(raw)}; choose from ${Object.keys(ENCODER_WIDTHS).join(', ')}`,
  );
}

function parseBackend(raw: string): 'hash' | 'transformers' {
  if (raw === 'hash' || raw === 'transformers') return raw;
  throw new UsageError(`unknown backend ${JSON.stringify(raw)}; choose hash or transformers`);
}

async function main(argv: string[]): Promise<number> {
  const [command, ...rest] = argv;
  if (command === 'visual') {
    const { values } = parseArgs({
      args: rest,
      options: {
        input: { type: 'string' },
        output: { type: 'string' },
        encoder: { type: 'string', default: 'L/14' },
        backend: { type: 'string', default: 'hash' },
        fps: { type: 'string', default: '30' },
        resize: { type: 'string', default: '224' },
      },
    });
    if (!values.input || !values.output) {
      throw new UsageError('visual needs --input and --output');
    }
    const result = await extractVisual({
      input: values.input,
      output: values.output,
      encoder: parseVariant(values.encoder!),
      backend: parseBackend(values.backend!),
      fps: Number(values.fps),
      resizeTo: Number(values.resize),
    });
    console.log(`wrote ${result.frames} frames x ${result.dim} to ${values.output}`);
    return 0;
  }
  if (command === 'text') {
    const { values } = parseArgs({
      args: rest,
      options: {
        vocab: { type: 'string' },
        output: { type: 'string' },
        mode: { type: 'string' },
        encoder: { type: 'string', default: 'L/14' },
        backend: { type: 'string', default: 'hash' },
      },
    });
    if (!values.vocab || !values.output || !values.mode) {
      throw new UsageError('text needs --vocab, --output and --mode');
    }
    if (!(values.mode in TEXT_MODE_BYTES)) {
      throw new UsageError(
        `unknown mode ${values.mode}; choose from ${Object.keys(TEXT_MODE_BYTES).join(', ')}`,
      );
    }
    const result = await extractText({
      vocab: values.vocab,
      output: values.output,
      mode: values.mode as TextMode,
      encoder: parseVariant(values.encoder!),
      backend: parseBackend(values.backend!),
    });
    console.log(`wrote ${result.classes} classes x ${result.dim} to ${values.output}`);
    return 0;
  }
  throw new UsageError('usage: toad-extract visual|text ...');
}

main(process.argv.slice(2))
  .then((code) => process.exit(code))
  .catch((err) => {
    if (err instanceof UsageError || err instanceof EncoderError) {
      console.error(`usage error: ${err.message}`);
      process.exit(2);
    }
    if (err instanceof JobError || err instanceof ImageError || err instanceof FormatError
        || (err as NodeJS.ErrnoException).code === 'ENOENT') {
      console.error(`data error: ${err.message}`);
      process.exit(3);
    }
    console.error(err);
    process.exit(1);
  });
