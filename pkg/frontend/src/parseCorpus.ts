import { ParserClient } from "./parserClient.js";
import { CorpusRecord, FailedRecord, ParseManifest } from "./types.js";

export interface CaptionInput {
  image_id: string;
  caption: string;
  line: number;
}

/** Read "id<TAB>caption" or bare-caption lines into inputs; bare lines get
 * sequential img ids. */
export function readCaptionLines(text: string): CaptionInput[] {
  const out: CaptionInput[] = [];
  const lines = text.split("\n");
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const tab = line.indexOf("\t");
    if (tab > 0) {
      out.push({ image_id: line.slice(0, tab).trim(), caption: line.slice(tab + 1).trim(), line: i + 1 });
    } else {
      out.push({ image_id: `img${String(out.length).padStart(5, "0")}`, caption: line, line: i + 1 });
    }
  }
  return out;
}

export interface ParseResult {
  records: CorpusRecord[];
  manifest: ParseManifest;
}

/** Annotate a batch of captions through the service.
 *
 * The service is probed first; an unreachable service aborts with a manifest
 * describing the partial state.  Individual caption failures are retried by
 * the client, then recorded in the manifest and skipped, never dropped
 * silently.  Requests run with bounded concurrency while records keep input
 * order.
 */
export async function parseCorpus(
  inputs: CaptionInput[],
  client: ParserClient,
  log: (msg: string) => void = () => {}
): Promise<ParseResult> {
  const manifest: ParseManifest = {
    total: inputs.length,
    completed: 0,
    failed: [],
    aborted: false,
  };
  if (inputs.length === 0) {
    return { records: [], manifest };
  }
  try {
    await client.probe();
  } catch (e) {
    manifest.aborted = true;
    manifest.reason = `service unreachable: ${(e as Error).message}`;
    log(manifest.reason);
    return { records: [], manifest };
  }

  const results: Array<CorpusRecord | FailedRecord> = new Array(inputs.length);
  let next = 0;
  const workers = Math.max(1, Math.min(client.config.concurrency, inputs.length));

  async function worker(): Promise<void> {
    while (next < inputs.length) {
      const index = next++;
      const input = inputs[index];
      try {
        const annotated = await client.annotate(input.caption);
        results[index] = {
          image_id: input.image_id,
          caption: input.caption,
          tokens: annotated.tokens,
          triplets: annotated.triplets,
        };
      } catch (e) {
        results[index] = {
          line: input.line,
          image_id: input.image_id,
          caption: input.caption,
          reason: (e as Error).message,
        };
        log(`line ${input.line}: ${(e as Error).message}`);
      }
    }
  }

  await Promise.all(Array.from({ length: workers }, () => worker()));

  const records: CorpusRecord[] = [];
  for (const result of results) {
    if ("reason" in result) {
      manifest.failed.push(result);
    } else {
      records.push(result);
      manifest.completed++;
    }
  }
  return { records, manifest };
}
