import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { loadModel } from './checkpoint.js';
import { checkSpatialDims } from './model.js';
import { imageTensor } from './data.js';
import { GrayImage, writePgm } from './pgm.js';

/**
 * Run a checkpoint on one graymap and write the refined image next to it
 * (<name>_refined.pgm). Returns the output path.
 */
export async function predict(checkpointDir: string, inputPath: string): Promise<string> {
  const model = await loadModel(checkpointDir);
  const x = imageTensor(inputPath);
  checkSpatialDims(x.shape[1], x.shape[2]);
  const pred = model.apply(x, { training: false }) as tf.Tensor4D;
  const data = (await pred.data()) as Float32Array;
  const out: GrayImage = { width: pred.shape[2], height: pred.shape[1], data };
  const target = path.join(
    path.dirname(inputPath),
    path.basename(inputPath).replace(/\.pgm$/i, '') + '_refined.pgm',
  );
  writePgm(target, out);
  tf.dispose([x, pred]);
  model.dispose();
  return target;
}
