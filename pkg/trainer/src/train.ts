// Minibatch Adam training of the residual network on an exported dataset.

import { Dataset, splitDataset } from "./data";
import {
  adamStep,
  createAdam,
  createMlp,
  Mlp,
  mse,
  mseBackward,
  zeroGradients,
} from "./mlp";
import { mulberry32, shuffled } from "./rng";

export interface TrainConfig {
  epochs: number;
  batchSize: number;
  learningRate: number;
  validationFraction: number;
  seed: number;
  hidden: number[];
  inputDim: number;
  outputDim: number;
  // L2 penalty folded into the gradients; keeps the parameterization from
  // wandering on degenerate targets
  weightDecay: number;
  // halve the learning rate at these epoch fractions
  decayAt?: number[];
  logEvery?: number;
}

export const defaultConfig: TrainConfig = {
  epochs: 2000,
  batchSize: 128,
  learningRate: 2e-3,
  validationFraction: 0.1,
  seed: 0,
  hidden: [64, 64, 64],
  inputDim: 3,
  outputDim: 2,
  weightDecay: 1e-6,
  decayAt: [0.6, 0.85],
};

export interface TrainResult {
  mlp: Mlp;
  trainMse: number;
  valMse: number;
}

export function train(data: Dataset, config: TrainConfig): TrainResult {
  if (data.inputs[0].length !== config.inputDim) {
    throw new Error(
      `dataset input dim ${data.inputs[0].length} != ${config.inputDim}`
    );
  }
  if (data.targets[0].length !== config.outputDim) {
    throw new Error(
      `dataset output dim ${data.targets[0].length} != ${config.outputDim}`
    );
  }
  const rng = mulberry32(config.seed);
  const dims = [config.inputDim, ...config.hidden, config.outputDim];
  const mlp = createMlp(dims, rng);
  const { train: trainSet, val } = splitDataset(
    data, config.validationFraction, shuffled(data.inputs.length, rng)
  );
  const adam = createAdam(mlp);
  const n = trainSet.inputs.length;
  let lr = config.learningRate;
  const decayEpochs = (config.decayAt ?? []).map((f) =>
    Math.floor(f * config.epochs)
  );
  let bestVal = Infinity;
  let bestSnapshot: { weights: Float64Array[]; biases: Float64Array[] } | null =
    null;
  for (let epoch = 0; epoch < config.epochs; epoch++) {
    if (decayEpochs.includes(epoch)) lr *= 0.5;
    const order = shuffled(n, rng);
    for (let start = 0; start < n; start += config.batchSize) {
      const end = Math.min(start + config.batchSize, n);
      const inputs: Float64Array[] = [];
      const targets: Float64Array[] = [];
      for (let i = start; i < end; i++) {
        inputs.push(trainSet.inputs[order[i]]);
        targets.push(trainSet.targets[order[i]]);
      }
      const grads = zeroGradients(mlp);
      const loss = mseBackward(mlp, inputs, targets, grads);
      if (!Number.isFinite(loss)) {
        throw new Error(`non-finite training loss at epoch ${epoch}`);
      }
      if (config.weightDecay > 0) {
        for (let l = 0; l < mlp.weights.length; l++) {
          const w = mlp.weights[l];
          const gw = grads.weights[l];
          for (let i = 0; i < w.length; i++) gw[i] += config.weightDecay * w[i];
        }
      }
      adamStep(mlp, grads, adam, lr);
    }
    const valMse = mse(mlp, val.inputs, val.targets);
    if (valMse < bestVal) {
      bestVal = valMse;
      bestSnapshot = {
        weights: mlp.weights.map((w) => w.slice()),
        biases: mlp.biases.map((b) => b.slice()),
      };
    }
    if (config.logEvery && epoch % config.logEvery === 0) {
      console.log(
        `epoch ${epoch}: train ${mse(mlp, trainSet.inputs, trainSet.targets).toExponential(3)} ` +
          `val ${valMse.toExponential(3)}`
      );
    }
  }
  if (bestSnapshot) {
    mlp.weights = bestSnapshot.weights;
    mlp.biases = bestSnapshot.biases;
  }
  return {
    mlp,
    trainMse: mse(mlp, trainSet.inputs, trainSet.targets),
    valMse: mse(mlp, val.inputs, val.targets),
  };
}
