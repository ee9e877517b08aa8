import * as tf from '@tensorflow/tfjs';

export interface ModelConfig {
  dncnnDepth: number;
  dncnnChannels: number;
  encoderChannels: number[];
  bottleneckChannels: number;
  seReduction: number;
  seed: number;
}

/** Published architecture: 17-layer denoiser, 3-level residual U-Net, SE gates. */
export function defaultModelConfig(seed = 0): ModelConfig {
  return {
    dncnnDepth: 17,
    dncnnChannels: 64,
    encoderChannels: [64, 128, 256],
    bottleneckChannels: 512,
    seReduction: 16,
    seed,
  };
}

/** Reduced widths for desk-scale training runs; same topology. */
export function toyModelConfig(seed = 0): ModelConfig {
  return {
    dncnnDepth: 5,
    dncnnChannels: 8,
    encoderChannels: [8, 16, 32],
    bottleneckChannels: 64,
    seReduction: 4,
    seed,
  };
}

export function validateConfig(cfg: ModelConfig): void {
  if (cfg.dncnnDepth < 3) throw new Error('denoiser needs at least 3 layers');
  if (cfg.dncnnChannels <= 0 || cfg.bottleneckChannels <= 0 || cfg.seReduction <= 0) {
    throw new Error('channel counts and the SE reduction must be positive');
  }
  if (cfg.encoderChannels.some((c) => c <= 0)) {
    throw new Error('encoder channels must be positive');
  }
}

export function checkSpatialDims(height: number, width: number, stages = 3): void {
  const f = 2 ** stages;
  if (height % f !== 0 || width % f !== 0) {
    throw new Error(
      `input ${height}x${width} is not divisible by ${f}; ` +
        `pad or crop the image before calling the model (no implicit padding)`,
    );
  }
}

class SeedStream {
  private k: number;
  constructor(base: number) {
    this.k = (base >>> 0) + 1;
  }
  next(): number {
    return this.k++;
  }
}

/** Elementwise a - b merge; the layers API ships no subtract merge layer. */
class SubtractLayer extends tf.layers.Layer {
  static className = 'SubtractLayer';
  call(inputs: tf.Tensor | tf.Tensor[]): tf.Tensor {
    const pair = inputs as tf.Tensor[];
    return tf.sub(pair[0], pair[1]);
  }
  computeOutputShape(inputShape: tf.Shape | tf.Shape[]): tf.Shape {
    return (inputShape as tf.Shape[])[0];
  }
}
tf.serialization.registerClass(SubtractLayer);

function conv(
  channels: number,
  seeds: SeedStream,
  name: string,
  activation?: 'relu' | 'sigmoid',
): tf.layers.Layer {
  return tf.layers.conv2d({
    filters: channels,
    kernelSize: 3,
    padding: 'same',
    activation,
    kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.next() }),
    name,
  });
}

/** Residual denoiser: the network predicts the noise and outputs x - F(x). */
export function buildDncnn(cfg: ModelConfig, seeds: SeedStream): tf.LayersModel {
  const input = tf.input({ shape: [null, null, 1] as unknown as number[], name: 'dncnn_in' });
  let h = conv(cfg.dncnnChannels, seeds, 'dncnn_conv_0', 'relu').apply(input) as tf.SymbolicTensor;
  for (let k = 1; k <= cfg.dncnnDepth - 2; k++) {
    h = conv(cfg.dncnnChannels, seeds, `dncnn_conv_${k}`).apply(h) as tf.SymbolicTensor;
    h = tf.layers
      .batchNormalization({ name: `dncnn_bn_${k}` })
      .apply(h) as tf.SymbolicTensor;
    h = tf.layers.reLU({ name: `dncnn_relu_${k}` }).apply(h) as tf.SymbolicTensor;
  }
  const noise = conv(1, seeds, `dncnn_conv_${cfg.dncnnDepth - 1}`).apply(h) as tf.SymbolicTensor;
  const denoised = new SubtractLayer({ name: 'dncnn_residual_out' }).apply([
    input,
    noise,
  ]) as tf.SymbolicTensor;
  return tf.model({ inputs: input, outputs: denoised, name: 'dncnn' });
}

function seGate(
  x: tf.SymbolicTensor,
  channels: number,
  reduction: number,
  seeds: SeedStream,
  name: string,
): tf.SymbolicTensor {
  const squeezed = tf.layers
    .globalAveragePooling2d({ name: `${name}_squeeze` })
    .apply(x) as tf.SymbolicTensor;
  const hidden = tf.layers
    .dense({
      units: Math.max(1, Math.round(channels / reduction)),
      activation: 'relu',
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.next() }),
      name: `${name}_reduce`,
    })
    .apply(squeezed) as tf.SymbolicTensor;
  const gate = tf.layers
    .dense({
      units: channels,
      activation: 'sigmoid',
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.next() }),
      name: `${name}_excite`,
    })
    .apply(hidden) as tf.SymbolicTensor;
  const shaped = tf.layers
    .reshape({ targetShape: [1, 1, channels], name: `${name}_reshape` })
    .apply(gate) as tf.SymbolicTensor;
  return tf.layers
    .multiply({ name: `${name}_scale` })
    .apply([x, shaped]) as tf.SymbolicTensor;
}

/** Two convolutions, channel-attention gate, identity skip (1x1 when widths differ). */
export function resBlock(
  x: tf.SymbolicTensor,
  channels: number,
  reduction: number,
  seeds: SeedStream,
  name: string,
): tf.SymbolicTensor {
  let branch = conv(channels, seeds, `${name}_conv1`).apply(x) as tf.SymbolicTensor;
  branch = tf.layers.batchNormalization({ name: `${name}_bn1` }).apply(branch) as tf.SymbolicTensor;
  branch = tf.layers.reLU({ name: `${name}_relu1` }).apply(branch) as tf.SymbolicTensor;
  branch = conv(channels, seeds, `${name}_conv2`).apply(branch) as tf.SymbolicTensor;
  branch = tf.layers.batchNormalization({ name: `${name}_bn2` }).apply(branch) as tf.SymbolicTensor;
  const gated = seGate(branch, channels, reduction, seeds, `${name}_se`);
  let skip = x;
  if ((x.shape[x.shape.length - 1] as number) !== channels) {
    skip = tf.layers
      .conv2d({
        filters: channels,
        kernelSize: 1,
        padding: 'same',
        kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.next() }),
        name: `${name}_skip`,
      })
      .apply(x) as tf.SymbolicTensor;
  }
  const merged = tf.layers.add({ name: `${name}_add` }).apply([skip, gated]) as tf.SymbolicTensor;
  return tf.layers.reLU({ name: `${name}_out` }).apply(merged) as tf.SymbolicTensor;
}

/** Encoder-decoder with skip concatenations and a sigmoid head. */
export function buildResUnet(cfg: ModelConfig, seeds: SeedStream): tf.LayersModel {
  const input = tf.input({ shape: [null, null, 1] as unknown as number[], name: 'unet_in' });
  const skips: tf.SymbolicTensor[] = [];
  let h = input;
  cfg.encoderChannels.forEach((ch, k) => {
    h = resBlock(h, ch, cfg.seReduction, seeds, `enc${k}`);
    skips.push(h);
    h = tf.layers
      .maxPooling2d({ poolSize: 2, name: `down${k}` })
      .apply(h) as tf.SymbolicTensor;
  });
  h = resBlock(h, cfg.bottleneckChannels, cfg.seReduction, seeds, 'bottleneck');
  for (let k = cfg.encoderChannels.length - 1; k >= 0; k--) {
    const ch = cfg.encoderChannels[k];
    h = tf.layers
      .conv2dTranspose({
        filters: ch,
        kernelSize: 2,
        strides: 2,
        padding: 'same',
        kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.next() }),
        name: `up${k}`,
      })
      .apply(h) as tf.SymbolicTensor;
    h = tf.layers
      .concatenate({ name: `skipcat${k}` })
      .apply([h, skips[k]]) as tf.SymbolicTensor;
    h = resBlock(h, ch, cfg.seReduction, seeds, `dec${k}`);
  }
  const out = tf.layers
    .conv2d({
      filters: 1,
      kernelSize: 1,
      activation: 'sigmoid',
      kernelInitializer: tf.initializers.glorotUniform({ seed: seeds.next() }),
      name: 'unet_head',
    })
    .apply(h) as tf.SymbolicTensor;
  return tf.model({ inputs: input, outputs: out, name: 'resunet' });
}

export interface Refiner {
  model: tf.LayersModel;
  dncnn: tf.LayersModel;
  unet: tf.LayersModel;
  config: ModelConfig;
}

/** Full refiner: denoised = x - F(x), refined = UNet(denoised) in [0, 1]. */
export function buildModel(cfg: ModelConfig): Refiner {
  validateConfig(cfg);
  const seeds = new SeedStream(cfg.seed);
  const dncnn = buildDncnn(cfg, seeds);
  const unet = buildResUnet(cfg, seeds);
  const input = tf.input({ shape: [null, null, 1] as unknown as number[], name: 'refiner_in' });
  const denoised = dncnn.apply(input) as tf.SymbolicTensor;
  const refined = unet.apply(denoised) as tf.SymbolicTensor;
  const model = tf.model({ inputs: input, outputs: refined, name: 'refiner' });
  return { model, dncnn, unet, config: cfg };
}

/** Trainable parameter count of a model (kernels, biases, norm scales). */
export function trainableParamCount(model: tf.LayersModel): number {
  return model.trainableWeights.reduce((acc, w) => acc + w.read().size, 0);
}

/** Apply the refiner to a [1, H, W, 1] tensor, enforcing the dimension policy. */
export function applyRefiner(
  refiner: Refiner,
  x: tf.Tensor4D,
  training = false,
): tf.Tensor4D {
  checkSpatialDims(x.shape[1], x.shape[2], refiner.config.encoderChannels.length);
  return refiner.model.apply(x, { training }) as tf.Tensor4D;
}
