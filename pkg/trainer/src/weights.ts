// Portable weight-file schema shared with the filtering runtime:
// {"input_dim", "output_dim", "activation": "relu",
//  "layers": [{"weights": [[...]], "bias": [...]}]}

import * as fs from "fs";
import { Mlp } from "./mlp";

export function toWeightsJson(mlp: Mlp): string {
  const layers = [];
  for (let l = 0; l < mlp.weights.length; l++) {
    const nIn = mlp.dims[l];
    const nOut = mlp.dims[l + 1];
    const rows: number[][] = [];
    for (let r = 0; r < nOut; r++) {
      rows.push(Array.from(mlp.weights[l].subarray(r * nIn, (r + 1) * nIn)));
    }
    layers.push({ weights: rows, bias: Array.from(mlp.biases[l]) });
  }
  return JSON.stringify({
    input_dim: mlp.dims[0],
    output_dim: mlp.dims[mlp.dims.length - 1],
    activation: "relu",
    layers,
  });
}

export function saveWeights(mlp: Mlp, path: string): void {
  fs.writeFileSync(path, toWeightsJson(mlp));
}

export function fromWeightsJson(text: string): Mlp {
  const doc = JSON.parse(text);
  if (doc.activation !== "relu") {
    throw new Error(`unsupported activation ${doc.activation}`);
  }
  const dims: number[] = [doc.input_dim];
  const weights: Float64Array[] = [];
  const biases: Float64Array[] = [];
  for (const layer of doc.layers) {
    const rows: number[][] = layer.weights;
    const nOut = rows.length;
    const nIn = rows[0].length;
    if (dims[dims.length - 1] !== nIn) {
      throw new Error("layer dimensions do not chain");
    }
    const w = new Float64Array(nOut * nIn);
    for (let r = 0; r < nOut; r++) {
      for (let c = 0; c < nIn; c++) w[r * nIn + c] = rows[r][c];
    }
    weights.push(w);
    biases.push(Float64Array.from(layer.bias));
    dims.push(nOut);
  }
  return { dims, weights, biases };
}
