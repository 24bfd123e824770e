import { describe, expect, it } from "vitest";

import { ParserClient } from "../src/parserClient.js";
import { parseCorpus, readCaptionLines } from "../src/parseCorpus.js";

const DEP_KEY = "collapsed-ccprocessed-dependencies";

function serviceFor(handler: (caption: string) => unknown) {
  return async (_url: string, init: { body: string }) => {
    const { text } = JSON.parse(init.body) as { text: string };
    const payload = handler(text);
    if (payload instanceof Error) throw payload;
    return { ok: true, status: 200, text: async () => JSON.stringify(payload) };
  };
}

function okPayload(caption: string) {
  const words = caption.split(/\s+/);
  return {
    sentences: [
      {
        tokens: words.map((word, i) => ({ index: i + 1, word })),
        [DEP_KEY]:
          words.length > 1 ? [{ dep: "det", governor: 2, dependent: 1 }] : [],
      },
    ],
  };
}

describe("readCaptionLines", () => {
  it("assigns sequential ids to bare lines and honors tab-separated ids", () => {
    const got = readCaptionLines("a dog\n\npic7\tthe cat\n");
    expect(got).toEqual([
      { image_id: "img00000", caption: "a dog", line: 1 },
      { image_id: "pic7", caption: "the cat", line: 3 },
    ]);
  });
});

describe("parseCorpus", () => {
  it("keeps input order under concurrency", async () => {
    const delays: Record<string, number> = { "c 0": 30, "c 1": 1, "c 2": 15 };
    const fetchImpl = async (_url: string, init: { body: string }) => {
      const { text } = JSON.parse(init.body) as { text: string };
      await new Promise((r) => setTimeout(r, delays[text] ?? 0));
      return { ok: true, status: 200, text: async () => JSON.stringify(okPayload(text)) };
    };
    const client = new ParserClient(
      { endpoint: "http://svc", concurrency: 3, retries: 0 },
      fetchImpl as any
    );
    const inputs = readCaptionLines("c 0\nc 1\nc 2\n");
    const { records, manifest } = await parseCorpus(inputs, client);
    expect(manifest.completed).toBe(3);
    expect(records.map((r) => r.caption)).toEqual(["c 0", "c 1", "c 2"]);
  });

  it("records failed captions in the manifest and keeps the rest", async () => {
    const fetchImpl = serviceFor((caption) =>
      caption.includes("bad") ? new Error("boom") : okPayload(caption)
    );
    const client = new ParserClient(
      { endpoint: "http://svc", retries: 1, backoffMs: 1 },
      fetchImpl as any
    );
    const inputs = readCaptionLines("a dog\na bad one\na cat\n");
    const { records, manifest } = await parseCorpus(inputs, client);
    expect(manifest.completed).toBe(2);
    expect(manifest.failed).toHaveLength(1);
    expect(manifest.failed[0].line).toBe(2);
    expect(manifest.failed[0].reason).toContain("boom");
    expect(records.map((r) => r.caption)).toEqual(["a dog", "a cat"]);
  });

  it("aborts with a manifest when the service is unreachable", async () => {
    const fetchImpl = async () => {
      throw new Error("connect ECONNREFUSED");
    };
    const client = new ParserClient(
      { endpoint: "http://down", retries: 0, backoffMs: 1 },
      fetchImpl as any
    );
    const inputs = readCaptionLines("a dog\n");
    const { records, manifest } = await parseCorpus(inputs, client);
    expect(manifest.aborted).toBe(true);
    expect(manifest.reason).toContain("unreachable");
    expect(records).toEqual([]);
  });

  it("handles an empty input file", async () => {
    const client = new ParserClient(
      { endpoint: "http://svc" },
      serviceFor(okPayload) as any
    );
    const { records, manifest } = await parseCorpus([], client);
    expect(records).toEqual([]);
    expect(manifest).toEqual({ total: 0, completed: 0, failed: [], aborted: false });
  });
});
