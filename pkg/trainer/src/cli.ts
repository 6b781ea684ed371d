#!/usr/bin/env node
// Usage: node dist/src/cli.js --data dataset.csv --out weights.json
//        [--epochs N] [--batch N] [--lr F] [--seed N] [--split F]

import { loadCsv } from "./data";
import { defaultConfig, train } from "./train";
import { saveWeights } from "./weights";

function parseArgs(argv: string[]): Map<string, string> {
  const args = new Map<string, string>();
  for (let i = 0; i < argv.length; i += 2) {
    if (!argv[i].startsWith("--") || i + 1 >= argv.length) {
      throw new Error(`bad argument ${argv[i]}`);
    }
    args.set(argv[i].slice(2), argv[i + 1]);
  }
  return args;
}

function main(): void {
  const args = parseArgs(process.argv.slice(2));
  const dataPath = args.get("data");
  const outPath = args.get("out");
  if (!dataPath || !outPath) {
    console.error("required: --data <csv> --out <weights.json>");
    process.exit(2);
  }
  const config = {
    ...defaultConfig,
    epochs: Number(args.get("epochs") ?? defaultConfig.epochs),
    batchSize: Number(args.get("batch") ?? defaultConfig.batchSize),
    learningRate: Number(args.get("lr") ?? defaultConfig.learningRate),
    seed: Number(args.get("seed") ?? defaultConfig.seed),
    validationFraction: Number(args.get("split") ?? defaultConfig.validationFraction),
    logEvery: Number(args.get("log-every") ?? 25),
  };
  const data = loadCsv(dataPath, config.inputDim, config.outputDim);
  console.log(`training on ${data.inputs.length} rows from ${dataPath}`);
  const result = train(data, config);
  saveWeights(result.mlp, outPath);
  console.log(
    `wrote ${outPath}  train mse ${result.trainMse.toExponential(4)}  ` +
      `val mse ${result.valMse.toExponential(4)}`
  );
}

main();
