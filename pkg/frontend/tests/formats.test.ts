import assert from 'node:assert/strict';
import { test } from 'node:test';

import {
  decodeFeatures,
  decodeTextEmbeddings,
  encodeFeatures,
  encodeTextEmbeddings,
  FormatError,
} from '../src/formats.js';

function randomRows(n: number, dim: number, seed = 1): Float32Array[] {
  let state = seed;
  const next = () => {
    state = (state * 1103515245 + 12345) & 0x7fffffff;
    return state / 0x7fffffff - 0.5;
  };
  return Array.from({ length: n }, () => Float32Array.from({ length: dim }, next));
}

test('feature container round trip', () => {
  const rows = randomRows(7, 16);
  const buf = encodeFeatures(29.97, rows);
  const back = decodeFeatures(buf);
  assert.equal(back.frames, 7);
  assert.equal(back.dim, 16);
  assert.ok(Math.abs(back.fps - 29.97) < 1e-5);
  rows.forEach((row, i) => {
    for (let j = 0; j < 16; j++) assert.equal(back.data[i * 16 + j], row[j]);
  });
});

test('feature header layout is little-endian at fixed offsets', () => {
  const buf = encodeFeatures(30, randomRows(2, 3));
  assert.equal(buf.subarray(0, 8).toString('ascii'), 'TOADFEAT');
  assert.equal(buf.readUInt32LE(8), 1);
  assert.equal(buf.readUInt32LE(16), 2);
  assert.equal(buf.readUInt32LE(20), 3);
  assert.equal(buf.length, 24 + 4 * 6);
});

test('text container round trip with every mode byte', () => {
  const rows = randomRows(4, 8);
  for (const [mode, byte] of [['class_name', 0], ['prompt', 1],
                              ['future_prompt', 2]] as const) {
    const buf = encodeTextEmbeddings(rows, mode);
    assert.equal(buf.readUInt8(20), byte);
    const back = decodeTextEmbeddings(buf);
    assert.equal(back.mode, mode);
    assert.equal(back.classes, 4);
    assert.equal(back.dim, 8);
  }
});

test('ragged rows are rejected', () => {
  const rows = [new Float32Array(4), new Float32Array(5)];
  assert.throws(() => encodeFeatures(30, rows), FormatError);
});

test('truncated payload is detected', () => {
  const buf = encodeFeatures(30, randomRows(3, 4));
  assert.throws(() => decodeFeatures(buf.subarray(0, buf.length - 3)), FormatError);
});
