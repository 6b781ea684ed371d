// Dataset CSV: header line, then theta,theta_dot,torque,res_theta,res_theta_dot.

import * as fs from "fs";

export interface Dataset {
  inputs: Float64Array[];
  targets: Float64Array[];
}

export function parseCsv(text: string, inputDim = 3, outputDim = 2): Dataset {
  const lines = text.trim().split(/\r?\n/);
  const inputs: Float64Array[] = [];
  const targets: Float64Array[] = [];
  for (let i = 1; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const parts = line.split(",").map(Number);
    if (parts.length !== inputDim + outputDim || parts.some(Number.isNaN)) {
      throw new Error(`bad dataset row ${i}: ${lines[i]}`);
    }
    inputs.push(Float64Array.from(parts.slice(0, inputDim)));
    targets.push(Float64Array.from(parts.slice(inputDim)));
  }
  if (inputs.length === 0) throw new Error("dataset is empty");
  return { inputs, targets };
}

export function loadCsv(path: string, inputDim = 3, outputDim = 2): Dataset {
  return parseCsv(fs.readFileSync(path, "utf-8"), inputDim, outputDim);
}

export function splitDataset(
  data: Dataset,
  validationFraction: number,
  order: Int32Array
): { train: Dataset; val: Dataset } {
  if (!(validationFraction > 0 && validationFraction < 1)) {
    throw new Error("validation fraction must be in (0, 1)");
  }
  const n = data.inputs.length;
  const nVal = Math.max(1, Math.floor(n * validationFraction));
  const val: Dataset = { inputs: [], targets: [] };
  const train: Dataset = { inputs: [], targets: [] };
  for (let i = 0; i < n; i++) {
    const bucket = i < nVal ? val : train;
    bucket.inputs.push(data.inputs[order[i]]);
    bucket.targets.push(data.targets[order[i]]);
  }
  return { train, val };
}
