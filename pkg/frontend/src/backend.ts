import * as path from 'node:path';
import * as tf from '@tensorflow/tfjs';
import { setWasmPaths } from '@tensorflow/tfjs-backend-wasm';

/**
 * The wasm backend ships every kernel this package needs except the
 * convolution filter gradient. For a stride-s, dilation-1 convolution that
 * gradient is itself a convolution: pad the input as the forward pass did,
 * move channels into the batch slot, and convolve with the upstream gradient
 * acting as a dilation-s filter. The kernel is registered for the wasm
 * backend as a composition of ops it already has.
 */

function samePadAmounts(
  inSize: number,
  outSize: number,
  kernel: number,
  stride: number,
): [number, number] {
  const padAlong = Math.max((outSize - 1) * stride + kernel - inSize, 0);
  const before = Math.floor(padAlong / 2);
  return [before, padAlong - before];
}

export function convFilterGrad(
  x: tf.Tensor4D,
  dy: tf.Tensor4D,
  strides: [number, number] | number,
  pad: 'same' | 'valid' | number,
  filterShape: [number, number, number, number],
): tf.Tensor4D {
  const [sh, sw] = typeof strides === 'number' ? [strides, strides] : strides;
  const [kh, kw] = [filterShape[0], filterShape[1]];
  let padTop = 0;
  let padBottom = 0;
  let padLeft = 0;
  let padRight = 0;
  if (pad === 'same') {
    [padTop, padBottom] = samePadAmounts(x.shape[1], dy.shape[1], kh, sh);
    [padLeft, padRight] = samePadAmounts(x.shape[2], dy.shape[2], kw, sw);
  } else if (typeof pad === 'number') {
    padTop = padBottom = padLeft = padRight = pad;
  }
  return tf.tidy(() => {
    const xPad = tf.pad(x, [
      [0, 0],
      [padTop, padBottom],
      [padLeft, padRight],
      [0, 0],
    ]);
    const xT = tf.transpose(xPad, [3, 1, 2, 0]); // channels into the batch slot
    const dyT = tf.transpose(dy, [1, 2, 0, 3]); // batch into the in-channel slot
    const res = tf.conv2d(
      xT as tf.Tensor4D,
      dyT as tf.Tensor4D,
      1,
      'valid',
      'NHWC',
      [sh, sw],
    );
    return tf.transpose(res, [1, 2, 0, 3]) as tf.Tensor4D;
  });
}

let registered = false;

export function registerWasmFilterGradKernel(): void {
  if (registered) return;
  registered = true;
  tf.registerKernel({
    kernelName: 'Conv2DBackpropFilter',
    backendName: 'wasm',
    kernelFunc: ({ inputs, attrs, backend }) => {
      const kb = backend as tf.KernelBackend;
      const xInfo = inputs.x as tf.TensorInfo;
      const dyInfo = inputs.dy as tf.TensorInfo;
      const { strides, pad, filterShape } = attrs as unknown as {
        strides: [number, number] | number;
        pad: 'same' | 'valid' | number;
        filterShape: [number, number, number, number];
      };
      // work on copies so ownership never crosses into the tape's buffers
      const x = tf.tensor4d(
        kb.readSync(xInfo.dataId) as Float32Array,
        xInfo.shape as [number, number, number, number],
      );
      const dy = tf.tensor4d(
        kb.readSync(dyInfo.dataId) as Float32Array,
        dyInfo.shape as [number, number, number, number],
      );
      const out = convFilterGrad(x, dy, strides, pad, filterShape);
      const values = out.dataSync();
      tf.dispose([out, x, dy]);
      const dataId = kb.write(values as Float32Array, filterShape, 'float32');
      return { dataId, shape: filterShape, dtype: 'float32' };
    },
  });
}

/** Select the fastest working backend: wasm (patched), falling back to cpu. */
export async function initBackend(prefer: 'wasm' | 'cpu' = 'wasm'): Promise<string> {
  if (prefer === 'wasm') {
    try {
      setWasmPaths(
        path.join(
          path.dirname(new URL(import.meta.url).pathname),
          '..',
          'node_modules',
          '@tensorflow',
          'tfjs-backend-wasm',
          'dist',
        ) + path.sep,
      );
      await tf.setBackend('wasm');
      await tf.ready();
      registerWasmFilterGradKernel();
      return 'wasm';
    } catch {
      // fall through to cpu
    }
  }
  await tf.setBackend('cpu');
  await tf.ready();
  return 'cpu';
}
