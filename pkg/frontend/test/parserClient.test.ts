import { describe, expect, it } from "vitest";

import { MalformedResponseError, ParserClient } from "../src/parserClient.js";
import { ServiceResponse } from "../src/types.js";

const DEP_KEY = "collapsed-ccprocessed-dependencies";

function responder(payload: unknown, status = 200) {
  return async () => ({
    ok: status >= 200 && status < 300,
    status,
    text: async () => JSON.stringify(payload),
  });
}

function client(fetchImpl: any, overrides = {}) {
  return new ParserClient(
    { endpoint: "http://svc/annotate", retries: 2, backoffMs: 1, ...overrides },
    fetchImpl
  );
}

describe("ParserClient", () => {
  it("converts 1-based arcs to 0-based triplets, dropping root and punct arcs", async () => {
    const payload: ServiceResponse = {
      sentences: [
        {
          tokens: [
            { index: 1, word: "The" },
            { index: 2, word: "dog" },
            { index: 3, word: "runs" },
            { index: 4, word: "." },
          ],
          [DEP_KEY]: [
            { dep: "root", governor: 0, dependent: 3 },
            { dep: "det", governor: 2, dependent: 1 },
            { dep: "nsubj", governor: 3, dependent: 2 },
            { dep: "punct", governor: 3, dependent: 4 },
          ],
        },
      ],
    };
    const got = await client(responder(payload)).annotate("The dog runs.");
    expect(got.tokens).toEqual(["The", "dog", "runs", "."]);
    expect(got.triplets).toEqual([
      { rel: "det", gov: 1, dep: 0 },
      { rel: "nsubj", gov: 2, dep: 1 },
    ]);
  });

  it("offsets indices across multiple sentences", async () => {
    const payload: ServiceResponse = {
      sentences: [
        {
          tokens: [{ index: 1, word: "Hi" }, { index: 2, word: "." }],
          [DEP_KEY]: [{ dep: "root", governor: 0, dependent: 1 }],
        },
        {
          tokens: [{ index: 1, word: "A" }, { index: 2, word: "cat" }],
          [DEP_KEY]: [{ dep: "det", governor: 2, dependent: 1 }],
        },
      ],
    };
    const got = await client(responder(payload)).annotate("Hi. A cat");
    expect(got.tokens).toEqual(["Hi", ".", "A", "cat"]);
    expect(got.triplets).toEqual([{ rel: "det", gov: 3, dep: 2 }]);
  });

  it("retries transient failures with backoff then succeeds", async () => {
    let calls = 0;
    const flaky = async () => {
      calls++;
      if (calls < 3) {
        return { ok: false, status: 503, text: async () => "busy" };
      }
      return responder({
        sentences: [
          { tokens: [{ index: 1, word: "ok" }], [DEP_KEY]: [] },
        ],
      })();
    };
    const got = await client(flaky).annotate("ok");
    expect(calls).toBe(3);
    expect(got.tokens).toEqual(["ok"]);
  });

  it("gives up after the configured retries", async () => {
    let calls = 0;
    const dead = async () => {
      calls++;
      throw new Error("ECONNREFUSED");
    };
    await expect(client(dead).annotate("x")).rejects.toThrow("ECONNREFUSED");
    expect(calls).toBe(3); // first try + 2 retries
  });

  it("does not retry malformed responses", async () => {
    let calls = 0;
    const bad = async () => {
      calls++;
      return { ok: true, status: 200, text: async () => "not json" };
    };
    await expect(client(bad).annotate("x")).rejects.toBeInstanceOf(MalformedResponseError);
    expect(calls).toBe(1);
  });

  it("rejects arcs pointing outside the token list", async () => {
    const payload = {
      sentences: [
        {
          tokens: [{ index: 1, word: "a" }],
          [DEP_KEY]: [{ dep: "det", governor: 9, dependent: 1 }],
        },
      ],
    };
    await expect(client(responder(payload)).annotate("a")).rejects.toBeInstanceOf(
      MalformedResponseError
    );
  });
});
