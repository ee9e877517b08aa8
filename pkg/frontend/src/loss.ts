import * as tf from '@tensorflow/tfjs';

/** Standard five-scale weights; shorter pyramids renormalize a prefix. */
const MSSSIM_WEIGHTS = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
const C1 = 0.01 ** 2;
const C2 = 0.03 ** 2;

let cachedWindow: tf.Tensor4D | null = null;

/** Shared 11x11 Gaussian window (sigma 1.5), kept alive across gradient taping. */
function gaussianWindow(): tf.Tensor4D {
  if (cachedWindow === null) {
    const size = 11;
    const sigma = 1.5;
    const half = (size - 1) / 2;
    const vals: number[] = [];
    for (let i = 0; i < size; i++) {
      vals.push(Math.exp(-((i - half) ** 2) / (2 * sigma * sigma)));
    }
    const t = tf.tensor1d(vals);
    const w = tf.outerProduct(t, t).div(tf.sum(t).square());
    cachedWindow = tf.keep(w.reshape([size, size, 1, 1])) as tf.Tensor4D;
    t.dispose();
  }
  return cachedWindow;
}

interface SsimPair {
  luminance: tf.Tensor;
  contrastStructure: tf.Tensor;
}

/**
 * Valid-mode Gaussian blur with a hand-written input gradient. The window is
 * a constant, yet the stock convolution gradient also produces a filter
 * gradient, whose kernel some backends do not ship; the custom gradient
 * avoids it. The window is symmetric, so the input gradient is the padded
 * convolution with the same window.
 */
function makeBlur(window: tf.Tensor4D, size: number) {
  return tf.customGrad((x, save) => {
    const value = tf.conv2d(x as tf.Tensor4D, window, 1, 'valid');
    (save as tf.GradSaveFunc)([]);
    const gradFunc = (dy: tf.Tensor) => {
      const m = size - 1;
      const padded = tf.pad(dy as tf.Tensor4D, [
        [0, 0],
        [m, m],
        [m, m],
        [0, 0],
      ]);
      return [tf.conv2d(padded as tf.Tensor4D, window, 1, 'valid')];
    };
    return { value, gradFunc: gradFunc as never };
  });
}

function ssimComponents(
  a: tf.Tensor4D,
  b: tf.Tensor4D,
  blurFn: (t: tf.Tensor4D) => tf.Tensor4D,
): SsimPair {
  const blur = blurFn;
  const muA = blur(a);
  const muB = blur(b);
  const muA2 = muA.square();
  const muB2 = muB.square();
  const muAB = muA.mul(muB);
  const sigmaA2 = blur(a.square() as tf.Tensor4D).sub(muA2);
  const sigmaB2 = blur(b.square() as tf.Tensor4D).sub(muB2);
  const sigmaAB = blur(a.mul(b) as tf.Tensor4D).sub(muAB);
  const luminance = muAB.mul(2).add(C1).div(muA2.add(muB2).add(C1)).mean();
  const contrastStructure = sigmaAB.mul(2).add(C2).div(sigmaA2.add(sigmaB2).add(C2)).mean();
  return { luminance, contrastStructure };
}

/**
 * Multi-scale structural similarity with 11x11 Gaussian windows (sigma 1.5).
 * `scales` defaults to 5; small images use 3 so the window stays valid.
 */
export function msSsim(a: tf.Tensor4D, b: tf.Tensor4D, scales = 5): tf.Tensor {
  if (a.shape.join() !== b.shape.join()) {
    throw new Error(`shape mismatch: ${a.shape} vs ${b.shape}`);
  }
  const minDim = Math.min(a.shape[1], a.shape[2]);
  if (minDim / 2 ** (scales - 1) < 11) {
    throw new Error(
      `image of size ${a.shape[1]}x${a.shape[2]} is too small for ${scales} scales`,
    );
  }
  const weights = MSSSIM_WEIGHTS.slice(0, scales);
  const wsum = weights.reduce((s, w) => s + w, 0);
  return tf.tidy(() => {
    const blur = makeBlur(gaussianWindow(), 11) as unknown as (t: tf.Tensor4D) => tf.Tensor4D;
    let score = tf.scalar(1.0);
    let curA = a;
    let curB = b;
    for (let s = 0; s < scales; s++) {
      const { luminance, contrastStructure } = ssimComponents(curA, curB, blur);
      const w = weights[s] / wsum;
      if (s === scales - 1) {
        score = score.mul(luminance.mul(contrastStructure).clipByValue(0, 1).pow(w));
      } else {
        score = score.mul(contrastStructure.clipByValue(0, 1).pow(w));
        curA = tf.avgPool(curA, 2, 2, 'same');
        curB = tf.avgPool(curB, 2, 2, 'same');
      }
    }
    return score;
  });
}

/** gamma * (1 - MS-SSIM) + (1 - gamma) * mean absolute error. */
export function lossTotal(
  pred: tf.Tensor4D,
  target: tf.Tensor4D,
  gamma: number,
  scales = 5,
): tf.Tensor {
  if (pred.shape.join() !== target.shape.join()) {
    throw new Error(`shape mismatch: ${pred.shape} vs ${target.shape}`);
  }
  return tf.tidy(() => {
    const l1 = pred.sub(target).abs().mean();
    if (gamma === 0) {
      return l1;
    }
    const structural = tf.scalar(1.0).sub(msSsim(pred, target, scales));
    return structural.mul(gamma).add(l1.mul(1 - gamma));
  });
}

export const PSNR_CAP_DB = 99;

/** Peak signal-to-noise ratio for unit-range images; zero error caps at 99 dB. */
export function psnr(a: tf.Tensor, b: tf.Tensor): number {
  const mse = tf.tidy(() => a.sub(b).square().mean().arraySync() as number);
  if (mse <= 0) {
    return PSNR_CAP_DB;
  }
  return Math.min(PSNR_CAP_DB, 10 * Math.log10(1 / mse));
}
