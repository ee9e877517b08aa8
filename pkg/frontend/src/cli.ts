import * as process from 'node:process';
import { initBackend } from './backend.js';
import { scanDataset, loadPair } from './data.js';
import { lossTotal, psnr } from './loss.js';
import { defaultModelConfig, toyModelConfig } from './model.js';
import { defaultTrainConfig, train } from './train.js';
import { loadModel } from './checkpoint.js';
import { predict } from './predict.js';

function argValue(args: string[], name: string): string | undefined {
  const k = args.indexOf(name);
  return k >= 0 ? args[k + 1] : undefined;
}

async function cmdTrain(args: string[]): Promise<number> {
  const data = argValue(args, '--data');
  const out = argValue(args, '--out') ?? 'refiner-run';
  if (!data) {
    console.error('usage: train --data <dataset dir> --out <dir> [--epochs N] [--toy]');
    return 2;
  }
  const cfg = defaultTrainConfig(Number(argValue(args, '--seed') ?? 0));
  const epochs = argValue(args, '--epochs');
  if (epochs !== undefined) cfg.epochs = Number(epochs);
  const batch = argValue(args, '--batch');
  if (batch !== undefined) cfg.batchSize = Number(batch);
  const gamma = argValue(args, '--gamma');
  if (gamma !== undefined) cfg.gamma = Number(gamma);
  const scales = argValue(args, '--scales');
  if (scales !== undefined) cfg.msSsimScales = Number(scales);
  const modelCfg = args.includes('--toy') ? toyModelConfig(cfg.seed) : defaultModelConfig(cfg.seed);
  const result = await train(data, modelCfg, cfg, out);
  const last = result.history.at(-1);
  console.log(
    `trained ${cfg.epochs} epochs; final train loss ${last?.trainLoss ?? NaN}; ` +
      `best val loss ${result.bestValLoss} at epoch ${result.bestEpoch}; checkpoints in ${out}`,
  );
  return 0;
}

async function cmdPredict(args: string[]): Promise<number> {
  const ckpt = argValue(args, '--checkpoint');
  const input = argValue(args, '--input');
  if (!ckpt || !input) {
    console.error('usage: predict --checkpoint <dir> --input <pgm>');
    return 2;
  }
  const out = await predict(ckpt, input);
  console.log(`refined image written to ${out}`);
  return 0;
}

async function cmdEval(args: string[]): Promise<number> {
  const ckpt = argValue(args, '--checkpoint');
  const data = argValue(args, '--data');
  if (!ckpt || !data) {
    console.error('usage: eval --checkpoint <dir> --data <dataset dir>');
    return 2;
  }
  const gamma = Number(argValue(args, '--gamma') ?? 0.84);
  const scales = Number(argValue(args, '--scales') ?? 5);
  const model = await loadModel(ckpt);
  const splits = scanDataset(data);
  const pairs = splits.test.length ? splits.test : splits.val;
  let lossSum = 0;
  let psnrSum = 0;
  for (const p of pairs) {
    const { x, y } = loadPair(p);
    const pred = model.apply(x, { training: false }) as import('@tensorflow/tfjs').Tensor4D;
    lossSum += lossTotal(pred, y, gamma, scales).arraySync() as number;
    psnrSum += psnr(pred, y);
    x.dispose();
    y.dispose();
    pred.dispose();
  }
  console.log(
    `evaluated ${pairs.length} cases: mean loss ${lossSum / pairs.length}, ` +
      `mean PSNR ${psnrSum / pairs.length} dB`,
  );
  return 0;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    const backend = await initBackend(rest.includes('--cpu') ? 'cpu' : 'wasm');
    console.error(`backend: ${backend}`);
    if (command === 'train') return await cmdTrain(rest);
    if (command === 'predict') return await cmdPredict(rest);
    if (command === 'eval') return await cmdEval(rest);
    console.error('usage: cli.ts {train|predict|eval} ...');
    return 2;
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
}

main().then((code) => {
  if (code !== 0) process.exit(code);
});
