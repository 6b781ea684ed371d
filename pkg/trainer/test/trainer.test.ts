import assert from "node:assert/strict";
import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as os from "node:os";
import * as path from "node:path";
import test from "node:test";

import { parseCsv } from "../src/data";
import { createMlp, forward, mse } from "../src/mlp";
import { mulberry32 } from "../src/rng";
import { defaultConfig, train } from "../src/train";
import { fromWeightsJson, saveWeights, toWeightsJson } from "../src/weights";

const tmpDir = fs.mkdtempSync(path.join(os.tmpdir(), "trainer-test-"));

function syntheticCsv(rows: number, seed: number, zeroTargets: boolean): string {
  const rng = mulberry32(seed);
  const lines = ["theta,theta_dot,torque,res_theta,res_theta_dot"];
  for (let i = 0; i < rows; i++) {
    const x = [rng() * 2 - 1, rng() * 2 - 1, rng() * 4 - 2];
    const y = zeroTargets ? [0, 0] : [Math.sin(x[0]) * 0.1, x[1] * 0.05];
    lines.push([...x, ...y].join(","));
  }
  return lines.join("\n");
}

test("csv parsing validates shape", () => {
  assert.throws(() => parseCsv("header\n1,2,3\n"), /bad dataset row/);
  assert.throws(() => parseCsv("header\n"), /empty/);
  const data = parseCsv("h\n1,2,3,4,5\n");
  assert.equal(data.inputs.length, 1);
  assert.deepEqual(Array.from(data.targets[0]), [4, 5]);
});

test("weight schema round-trips through JSON", () => {
  const mlp = createMlp([3, 8, 2], mulberry32(1));
  const clone = fromWeightsJson(toWeightsJson(mlp));
  const probe = Float64Array.from([0.3, -0.7, 1.1]);
  assert.deepEqual(Array.from(forward(clone, probe)), Array.from(forward(mlp, probe)));
});

test("zero-residual dataset trains to tiny validation error", () => {
  const data = parseCsv(syntheticCsv(400, 7, true));
  const result = train(data, {
    ...defaultConfig,
    epochs: 400,
    batchSize: 64,
    learningRate: 5e-3,
    weightDecay: 1e-3,
    hidden: [32, 32],
    seed: 3,
    decayAt: [0.4, 0.6, 0.75, 0.87],
  });
  assert.ok(
    result.valMse < 1e-6,
    `validation mse ${result.valMse} not below 1e-6`
  );
});

test("fixed seed produces an identical weight file", () => {
  const data = parseCsv(syntheticCsv(200, 9, false));
  const config = {
    ...defaultConfig,
    epochs: 15,
    batchSize: 32,
    hidden: [16, 16],
    seed: 42,
  };
  const first = toWeightsJson(train(data, config).mlp);
  const second = toWeightsJson(train(data, config).mlp);
  assert.equal(first, second);
});

test("pendulum dataset: validation mse and cross-runtime parity", () => {
  // dataset comes from the filtering runtime's exporter (its external
  // interface), training happens here, and the exported weights must load
  // back into that runtime with matching forward evaluations
  const datasetPath = path.join(tmpDir, "pendulum.csv");
  execFileSync("python3", [
    "-m", "safefilter.cli", "export-dataset",
    "--duration", "240", "--seed", "1", "--out", datasetPath,
  ]);
  const data = parseCsv(fs.readFileSync(datasetPath, "utf-8"));
  const result = train(data, {
    ...defaultConfig,
    epochs: 300,
    batchSize: 128,
    learningRate: 2e-3,
    seed: 0,
    decayAt: [0.35, 0.6, 0.8],
  });
  assert.ok(
    result.valMse <= 1e-3,
    `pendulum validation mse ${result.valMse} above 1e-3`
  );

  const weightsPath = path.join(tmpDir, "weights.json");
  saveWeights(result.mlp, weightsPath);

  const rng = mulberry32(123);
  const points: number[][] = [];
  const ours: number[][] = [];
  for (let i = 0; i < 1000; i++) {
    const z = Float64Array.from([
      rng() * 7 - 3.5,
      rng() * 10 - 5,
      rng() * 30 - 15,
    ]);
    points.push(Array.from(z));
    ours.push(Array.from(forward(result.mlp, z)));
  }
  const pointsPath = path.join(tmpDir, "points.json");
  const outPath = path.join(tmpDir, "python_fwd.json");
  fs.writeFileSync(pointsPath, JSON.stringify(points));
  execFileSync("python3", [
    "-c",
    [
      "import json, sys",
      "import numpy as np",
      "from safefilter.network import load_network",
      "net = load_network(sys.argv[1])",
      "pts = np.array(json.load(open(sys.argv[2])))",
      "json.dump(net.forward_batch(pts).tolist(), open(sys.argv[3], 'w'))",
    ].join("\n"),
    weightsPath,
    pointsPath,
    outPath,
  ]);
  const theirs: number[][] = JSON.parse(fs.readFileSync(outPath, "utf-8"));
  let worst = 0;
  for (let i = 0; i < points.length; i++) {
    for (let r = 0; r < 2; r++) {
      worst = Math.max(worst, Math.abs(ours[i][r] - theirs[i][r]));
    }
  }
  assert.ok(worst <= 1e-6, `cross-runtime forward gap ${worst}`);
  console.log(
    `pendulum val mse ${result.valMse.toExponential(3)}, parity gap ${worst.toExponential(3)}`
  );

  // leave an artifact bundle so the filtering runtime's test suite can
  // re-verify the handshake from its side
  const outDir = path.join(__dirname, "..", "..", "out");
  fs.mkdirSync(outDir, { recursive: true });
  saveWeights(result.mlp, path.join(outDir, "pendulum_net.json"));
  fs.writeFileSync(
    path.join(outDir, "parity.json"),
    JSON.stringify({ val_mse: result.valMse, points, outputs: ours })
  );
});
