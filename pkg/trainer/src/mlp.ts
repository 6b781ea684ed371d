// Dense ReLU MLP with an affine output layer, plus Adam updates.
// Weights are row-major Float64Array blocks, one per layer: [out x in].

import { Rng, gaussian } from "./rng";

export interface Mlp {
  dims: number[]; // layer widths, input first
  weights: Float64Array[];
  biases: Float64Array[];
}

export function createMlp(dims: number[], rng: Rng): Mlp {
  const weights: Float64Array[] = [];
  const biases: Float64Array[] = [];
  for (let l = 0; l + 1 < dims.length; l++) {
    const nIn = dims[l];
    const nOut = dims[l + 1];
    const w = new Float64Array(nOut * nIn);
    const scale = Math.sqrt(2.0 / nIn); // He init for the ReLU stack
    for (let i = 0; i < w.length; i++) w[i] = gaussian(rng) * scale;
    weights.push(w);
    biases.push(new Float64Array(nOut));
  }
  return { dims: dims.slice(), weights, biases };
}

export function forward(mlp: Mlp, x: Float64Array): Float64Array {
  let a = x;
  const last = mlp.weights.length - 1;
  for (let l = 0; l <= last; l++) {
    const nIn = mlp.dims[l];
    const nOut = mlp.dims[l + 1];
    const w = mlp.weights[l];
    const b = mlp.biases[l];
    const out = new Float64Array(nOut);
    for (let r = 0; r < nOut; r++) {
      let acc = b[r];
      const row = r * nIn;
      for (let c = 0; c < nIn; c++) acc += w[row + c] * a[c];
      out[r] = l < last && acc < 0 ? 0 : acc;
    }
    a = out;
  }
  return a;
}

export interface Gradients {
  weights: Float64Array[];
  biases: Float64Array[];
}

export function zeroGradients(mlp: Mlp): Gradients {
  return {
    weights: mlp.weights.map((w) => new Float64Array(w.length)),
    biases: mlp.biases.map((b) => new Float64Array(b.length)),
  };
}

/** Accumulates MSE gradients over one minibatch; returns the batch loss.
 *  The loss is the mean squared error over every (sample, output) entry. */
export function mseBackward(
  mlp: Mlp,
  inputs: Float64Array[],
  targets: Float64Array[],
  grads: Gradients
): number {
  const last = mlp.weights.length - 1;
  const nLayers = mlp.weights.length;
  const batch = inputs.length;
  const outDim = mlp.dims[mlp.dims.length - 1];
  const denom = batch * outDim;
  let loss = 0;
  for (let s = 0; s < batch; s++) {
    // forward pass keeping activations
    const acts: Float64Array[] = [inputs[s]];
    for (let l = 0; l < nLayers; l++) {
      const nIn = mlp.dims[l];
      const nOut = mlp.dims[l + 1];
      const w = mlp.weights[l];
      const b = mlp.biases[l];
      const prev = acts[l];
      const out = new Float64Array(nOut);
      for (let r = 0; r < nOut; r++) {
        let acc = b[r];
        const row = r * nIn;
        for (let c = 0; c < nIn; c++) acc += w[row + c] * prev[c];
        out[r] = l < last && acc < 0 ? 0 : acc;
      }
      acts.push(out);
    }
    const target = targets[s];
    const pred = acts[nLayers];
    let delta = new Float64Array(outDim);
    for (let r = 0; r < outDim; r++) {
      const err = pred[r] - target[r];
      loss += err * err;
      delta[r] = (2.0 * err) / denom;
    }
    // backward pass
    for (let l = last; l >= 0; l--) {
      const nIn = mlp.dims[l];
      const nOut = mlp.dims[l + 1];
      const w = mlp.weights[l];
      const gw = grads.weights[l];
      const gb = grads.biases[l];
      const prev = acts[l];
      for (let r = 0; r < nOut; r++) {
        const d = delta[r];
        if (d === 0) continue;
        gb[r] += d;
        const row = r * nIn;
        for (let c = 0; c < nIn; c++) gw[row + c] += d * prev[c];
      }
      if (l > 0) {
        const next = new Float64Array(nIn);
        const act = acts[l];
        for (let c = 0; c < nIn; c++) {
          if (act[c] <= 0) continue; // ReLU gate (zero subgradient at 0)
          let acc = 0;
          for (let r = 0; r < nOut; r++) acc += w[r * nIn + c] * delta[r];
          next[c] = acc;
        }
        delta = next;
      }
    }
  }
  return loss / denom;
}

export function mse(mlp: Mlp, inputs: Float64Array[], targets: Float64Array[]): number {
  const outDim = mlp.dims[mlp.dims.length - 1];
  let loss = 0;
  for (let s = 0; s < inputs.length; s++) {
    const pred = forward(mlp, inputs[s]);
    for (let r = 0; r < outDim; r++) {
      const err = pred[r] - targets[s][r];
      loss += err * err;
    }
  }
  return loss / (inputs.length * outDim);
}

export interface AdamState {
  mW: Float64Array[];
  vW: Float64Array[];
  mB: Float64Array[];
  vB: Float64Array[];
  step: number;
}

export function createAdam(mlp: Mlp): AdamState {
  return {
    mW: mlp.weights.map((w) => new Float64Array(w.length)),
    vW: mlp.weights.map((w) => new Float64Array(w.length)),
    mB: mlp.biases.map((b) => new Float64Array(b.length)),
    vB: mlp.biases.map((b) => new Float64Array(b.length)),
    step: 0,
  };
}

export function adamStep(
  mlp: Mlp,
  grads: Gradients,
  state: AdamState,
  lr: number,
  beta1 = 0.9,
  beta2 = 0.999,
  eps = 1e-8
): void {
  state.step += 1;
  const c1 = 1 - Math.pow(beta1, state.step);
  const c2 = 1 - Math.pow(beta2, state.step);
  for (let l = 0; l < mlp.weights.length; l++) {
    const pairs: [Float64Array, Float64Array, Float64Array, Float64Array][] = [
      [mlp.weights[l], grads.weights[l], state.mW[l], state.vW[l]],
      [mlp.biases[l], grads.biases[l], state.mB[l], state.vB[l]],
    ];
    for (const [param, grad, m, v] of pairs) {
      for (let i = 0; i < param.length; i++) {
        const g = grad[i];
        m[i] = beta1 * m[i] + (1 - beta1) * g;
        v[i] = beta2 * v[i] + (1 - beta2) * g * g;
        param[i] -= (lr * (m[i] / c1)) / (Math.sqrt(v[i] / c2) + eps);
      }
    }
  }
}
