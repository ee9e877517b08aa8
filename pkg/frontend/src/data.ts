import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { readPgm } from './pgm.js';

export interface CasePair {
  id: string;
  inputPath: string;
  targetPath: string;
}

export interface DatasetSplit {
  train: CasePair[];
  val: CasePair[];
  test: CasePair[];
}

/**
 * Read the paired dataset layout root/{train,val,test}/case_<id>/{input.pgm,
 * target.pgm}. Cases are sorted by id so iteration order is reproducible.
 */
export function scanDataset(root: string): DatasetSplit {
  const splits: DatasetSplit = { train: [], val: [], test: [] };
  for (const name of ['train', 'val', 'test'] as const) {
    const dir = path.join(root, name);
    if (!fs.existsSync(dir)) continue;
    for (const entry of fs.readdirSync(dir).sort()) {
      if (!entry.startsWith('case_')) continue;
      const input = path.join(dir, entry, 'input.pgm');
      const target = path.join(dir, entry, 'target.pgm');
      if (!fs.existsSync(input) || !fs.existsSync(target)) {
        throw new Error(`incomplete case directory: ${path.join(dir, entry)}`);
      }
      splits[name].push({ id: entry.slice('case_'.length), inputPath: input, targetPath: target });
    }
  }
  if (splits.train.length === 0) {
    throw new Error(`no training cases under ${root}`);
  }
  return splits;
}

/** Load one case as a pair of [1, H, W, 1] tensors in [0, 1]. */
export function loadPair(pair: CasePair): { x: tf.Tensor4D; y: tf.Tensor4D } {
  return { x: imageTensor(pair.inputPath), y: imageTensor(pair.targetPath) };
}

export function imageTensor(file: string): tf.Tensor4D {
  const img = readPgm(file);
  return tf.tensor4d(img.data, [1, img.height, img.width, 1]);
}

/** Deterministic in-place shuffle (32-bit LCG), used for epoch ordering. */
export function seededShuffle<T>(items: T[], seed: number): T[] {
  let state = (seed >>> 0) || 1;
  const next = () => {
    state = (Math.imul(state, 1664525) + 1013904223) >>> 0;
    return state / 2 ** 32;
  };
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(next() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}
