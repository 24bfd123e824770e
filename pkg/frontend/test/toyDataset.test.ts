import { describe, expect, it } from "vitest";

import { parseJsonl } from "../src/jsonl.js";
import { makeToyDataset } from "../src/toyDataset.js";
import { CorpusRecord } from "../src/types.js";

describe("makeToyDataset", () => {
  it("is byte-identical for a fixed seed", () => {
    const a = makeToyDataset(10, 16, 7);
    const b = makeToyDataset(10, 16, 7);
    expect(a.corpus).toBe(b.corpus);
    expect(a.features).toBe(b.features);
    expect(a.splits).toBe(b.splits);
    const c = makeToyDataset(10, 16, 8);
    expect(c.features).not.toBe(a.features);
  });

  it("emits feature vectors of the requested dimension", () => {
    const { features } = makeToyDataset(4, 9, 1);
    const rows = parseJsonl<{ image_id: string; feat: number[] }>(features);
    expect(rows).toHaveLength(4);
    for (const row of rows) {
      expect(row.feat).toHaveLength(9);
      for (const x of row.feat) {
        expect(Number.isFinite(x)).toBe(true);
      }
    }
  });

  it("keeps triplet indices 0-based and in bounds", () => {
    const { corpus } = makeToyDataset(12, 4, 3);
    const records = parseJsonl<CorpusRecord>(corpus);
    expect(records).toHaveLength(12);
    for (const record of records) {
      for (const t of record.triplets) {
        expect(t.gov).toBeGreaterThanOrEqual(0);
        expect(t.dep).toBeGreaterThanOrEqual(0);
        expect(t.gov).toBeLessThan(record.tokens.length);
        expect(t.dep).toBeLessThan(record.tokens.length);
        expect(t.gov).not.toBe(t.dep);
      }
    }
  });

  it("splits cover every image id", () => {
    const { splits, records } = makeToyDataset(6, 2, 0);
    const parsed = JSON.parse(splits) as { train: string[]; val: string[]; test: string[] };
    const ids = records.map((r) => r.image_id);
    expect(parsed.train).toEqual(ids);
    expect(parsed.val).toEqual(ids);
    expect(parsed.test).toEqual(ids);
  });

  it("emits raw-cased tokens (normalization happens downstream)", () => {
    const { records } = makeToyDataset(3, 2, 0);
    expect(records.some((r) => r.tokens.some((t) => /[A-Z]/.test(t)))).toBe(true);
  });
});
