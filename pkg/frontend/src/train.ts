import * as fs from 'node:fs';
import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { CasePair, loadPair, scanDataset, seededShuffle } from './data.js';
import { lossTotal, psnr } from './loss.js';
import { ModelConfig, Refiner, applyRefiner, buildModel, defaultModelConfig } from './model.js';
import { saveModel } from './checkpoint.js';

export interface TrainConfig {
  gamma: number;
  learningRate: number;
  weightDecay: number;
  plateauFactor: number;
  plateauPatience: number;
  /** Quantity the plateau rule watches; deliberate-overfit runs use 'train'. */
  plateauMonitor: 'val' | 'train';
  epochs: number;
  batchSize: number;
  msSsimScales: number;
  seed: number;
}

/** Published protocol: decoupled weight decay, halve-on-plateau, 200 epochs. */
export function defaultTrainConfig(seed = 0): TrainConfig {
  return {
    gamma: 0.84,
    learningRate: 1e-3,
    weightDecay: 1e-5,
    plateauFactor: 0.5,
    plateauPatience: 3,
    plateauMonitor: 'val',
    epochs: 200,
    batchSize: 4,
    msSsimScales: 5,
    seed,
  };
}

export interface EpochRecord {
  epoch: number;
  trainLoss: number;
  valLoss: number;
  valPsnr: number;
  lr: number;
}

export interface TrainResult {
  refiner: Refiner;
  history: EpochRecord[];
  bestValLoss: number;
  bestEpoch: number;
}

function batches(pairs: CasePair[], size: number): CasePair[][] {
  const out: CasePair[][] = [];
  for (let i = 0; i < pairs.length; i += size) {
    out.push(pairs.slice(i, i + size));
  }
  return out;
}

function loadBatch(pairs: CasePair[]): { x: tf.Tensor4D; y: tf.Tensor4D } {
  const xs: tf.Tensor4D[] = [];
  const ys: tf.Tensor4D[] = [];
  for (const p of pairs) {
    const { x, y } = loadPair(p);
    xs.push(x);
    ys.push(y);
  }
  const x = tf.concat(xs, 0) as tf.Tensor4D;
  const y = tf.concat(ys, 0) as tf.Tensor4D;
  xs.forEach((t) => t.dispose());
  ys.forEach((t) => t.dispose());
  return { x, y };
}

/** Decoupled weight decay on kernel weights (biases and norm scales skipped). */
function applyWeightDecay(refiner: Refiner, lr: number, decay: number): void {
  if (decay <= 0) return;
  const shrink = 1 - lr * decay;
  for (const w of refiner.model.trainableWeights) {
    if (w.name.includes('kernel')) {
      // read() hands back the live variable; only the scaled copy is ours
      const scaled = w.read().mul(shrink);
      w.write(scaled);
      scaled.dispose();
    }
  }
}

function evaluateSplit(
  refiner: Refiner,
  pairs: CasePair[],
  cfg: TrainConfig,
): { loss: number; psnrDb: number } {
  if (pairs.length === 0) {
    return { loss: Number.NaN, psnrDb: Number.NaN };
  }
  let lossSum = 0;
  let psnrSum = 0;
  for (const p of pairs) {
    const { x, y } = loadPair(p);
    const pred = applyRefiner(refiner, x, false);
    lossSum += lossTotal(pred, y, cfg.gamma, cfg.msSsimScales).arraySync() as number;
    psnrSum += psnr(pred, y);
    tf.dispose([x, y, pred]);
  }
  return { loss: lossSum / pairs.length, psnrDb: psnrSum / pairs.length };
}

/**
 * Seeded training loop over the paired-image directory layout. The best
 * validation checkpoint is kept at <outDir>/best, the final state at
 * <outDir>/last, and per-epoch metrics in metrics.csv.
 */
export async function train(
  datasetDir: string,
  modelCfg: ModelConfig | null,
  trainCfg: TrainConfig,
  outDir: string,
): Promise<TrainResult> {
  const splits = scanDataset(datasetDir);
  const refiner = buildModel(modelCfg ?? defaultModelConfig(trainCfg.seed));
  fs.mkdirSync(outDir, { recursive: true });

  const optimizer = tf.train.adam(trainCfg.learningRate);
  let lr = trainCfg.learningRate;
  const history: EpochRecord[] = [];
  let bestValLoss = Number.POSITIVE_INFINITY;
  let bestMonitored = Number.POSITIVE_INFINITY;
  let bestEpoch = -1;
  let sinceImprovement = 0;

  for (let epoch = 0; epoch < trainCfg.epochs; epoch++) {
    const order = seededShuffle(splits.train, trainCfg.seed + epoch * 9973);
    let epochLoss = 0;
    let nBatches = 0;
    for (const group of batches(order, trainCfg.batchSize)) {
      const { x, y } = loadBatch(group);
      const lossFn = (): tf.Scalar =>
        lossTotal(
          applyRefiner(refiner, x, true),
          y,
          trainCfg.gamma,
          trainCfg.msSsimScales,
        ) as tf.Scalar;
      (optimizer as tf.AdamOptimizer & { learningRate: number }).learningRate = lr;
      const lossVal = optimizer.minimize(lossFn, true);
      applyWeightDecay(refiner, lr, trainCfg.weightDecay);
      epochLoss += lossVal!.arraySync() as number;
      nBatches += 1;
      tf.dispose([x, y, lossVal!]);
    }
    const trainLoss = epochLoss / Math.max(1, nBatches);
    const { loss: valLoss, psnrDb } = evaluateSplit(refiner, splits.val, trainCfg);

    const checkpointSignal = Number.isNaN(valLoss) ? trainLoss : valLoss;
    if (checkpointSignal < bestValLoss - 1e-12) {
      bestValLoss = checkpointSignal;
      bestEpoch = epoch;
      await saveModel(refiner.model, path.join(outDir, 'best'));
    }
    const monitored =
      trainCfg.plateauMonitor === 'train' || Number.isNaN(valLoss) ? trainLoss : valLoss;
    if (monitored < bestMonitored - 1e-12) {
      bestMonitored = monitored;
      sinceImprovement = 0;
    } else {
      sinceImprovement += 1;
      if (sinceImprovement > trainCfg.plateauPatience) {
        lr *= trainCfg.plateauFactor;
        sinceImprovement = 0;
      }
    }
    history.push({ epoch, trainLoss, valLoss, valPsnr: psnrDb, lr });
    // yield so host RPC heartbeats survive long synchronous compute
    await new Promise((resolve) => setImmediate(resolve));
  }

  await saveModel(refiner.model, path.join(outDir, 'last'));
  if (bestEpoch < 0 && trainCfg.epochs > 0) {
    await saveModel(refiner.model, path.join(outDir, 'best'));
  }
  if (trainCfg.epochs === 0) {
    // zero-epoch contract: checkpoint equals initialization, metrics log empty
    await saveModel(refiner.model, path.join(outDir, 'best'));
  }
  writeMetrics(path.join(outDir, 'metrics.csv'), history);
  return { refiner, history, bestValLoss, bestEpoch };
}

function writeMetrics(file: string, history: EpochRecord[]): void {
  const lines = ['epoch,train_loss,val_loss,val_psnr,lr'];
  for (const r of history) {
    lines.push(`${r.epoch},${r.trainLoss},${r.valLoss},${r.valPsnr},${r.lr}`);
  }
  fs.writeFileSync(file, lines.join('\n') + '\n');
}
