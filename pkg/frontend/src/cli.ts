import * as fs from "node:fs";
import * as path from "node:path";

import { toJsonl } from "./jsonl.js";
import { ParserClient } from "./parserClient.js";
import { parseCorpus, readCaptionLines } from "./parseCorpus.js";
import { makeToyDataset } from "./toyDataset.js";

function flagValue(argv: string[], name: string): string | undefined {
  const idx = argv.indexOf(name);
  if (idx >= 0 && idx + 1 < argv.length) return argv[idx + 1];
  const prefixed = argv.find((a) => a.startsWith(name + "="));
  return prefixed ? prefixed.slice(name.length + 1) : undefined;
}

const USAGE = `usage:
  cli.js parse --in captions.txt --endpoint URL --out corpus.jsonl [--errors manifest.json]
               [--timeout-ms 10000] [--retries 3] [--concurrency 4]
  cli.js toy   --out-dir DIR [--n 10] [--d 16] [--seed 0]

parse reads one caption per line (optionally "id<TAB>caption"), annotates each
through the dependency service and writes corpus.jsonl; failures land in the
errors manifest.  toy writes a deterministic synthetic dataset
(corpus.jsonl, features.jsonl, splits.json).`;

async function cmdParse(argv: string[]): Promise<number> {
  const input = flagValue(argv, "--in");
  const endpoint = flagValue(argv, "--endpoint");
  const out = flagValue(argv, "--out");
  if (!input || !endpoint || !out) {
    console.error(USAGE);
    return 1;
  }
  const errorsPath = flagValue(argv, "--errors") ?? out + ".errors.json";
  const client = new ParserClient({
    endpoint,
    timeoutMs: Number(flagValue(argv, "--timeout-ms") ?? 10_000),
    retries: Number(flagValue(argv, "--retries") ?? 3),
    concurrency: Number(flagValue(argv, "--concurrency") ?? 4),
  });
  const inputs = readCaptionLines(fs.readFileSync(input, "utf-8"));
  const { records, manifest } = await parseCorpus(inputs, client, (msg) => console.error(msg));
  fs.writeFileSync(out, toJsonl(records));
  fs.writeFileSync(errorsPath, JSON.stringify(manifest, null, 2) + "\n");
  console.log(
    `annotated ${manifest.completed}/${manifest.total} captions -> ${out}` +
      (manifest.failed.length ? ` (${manifest.failed.length} failed, see ${errorsPath})` : "")
  );
  if (manifest.aborted) {
    console.error(`aborted: ${manifest.reason}`);
    return 2;
  }
  return 0;
}

function cmdToy(argv: string[]): number {
  const outDir = flagValue(argv, "--out-dir");
  if (!outDir) {
    console.error(USAGE);
    return 1;
  }
  const n = Number(flagValue(argv, "--n") ?? 10);
  const d = Number(flagValue(argv, "--d") ?? 16);
  const seed = Number(flagValue(argv, "--seed") ?? 0);
  const dataset = makeToyDataset(n, d, seed);
  fs.mkdirSync(outDir, { recursive: true });
  fs.writeFileSync(path.join(outDir, "corpus.jsonl"), dataset.corpus);
  fs.writeFileSync(path.join(outDir, "features.jsonl"), dataset.features);
  fs.writeFileSync(path.join(outDir, "splits.json"), dataset.splits);
  console.log(`wrote toy dataset (${n} images, d=${d}, seed=${seed}) -> ${outDir}`);
  return 0;
}

async function main(): Promise<number> {
  const [, , command, ...rest] = process.argv;
  if (command === "parse") return cmdParse(rest);
  if (command === "toy") return cmdToy(rest);
  console.error(USAGE);
  return 1;
}

main().then(
  (code) => process.exit(code),
  (e) => {
    console.error(String(e));
    process.exit(2);
  }
);
