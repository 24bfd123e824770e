import {
  AnnotatedCaption,
  DEFAULT_DEPENDENCY_TYPE,
  ParserServiceConfig,
  ServiceResponse,
  Triplet,
} from "./types.js";

export type FetchLike = (
  url: string,
  init: { method: string; headers: Record<string, string>; body: string; signal?: AbortSignal }
) => Promise<{ ok: boolean; status: number; text(): Promise<string> }>;

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

/** HTTP client for the dependency-annotation service.
 *
 * Requests are JSON: { text, dependencyType }.  Responses follow the
 * ServiceResponse shape with 1-based per-sentence arc indices; this client
 * flattens multi-sentence results and re-bases every index to 0 across the
 * whole caption, dropping virtual-root arcs.
 */
export class ParserClient {
  private readonly cfg: Required<ParserServiceConfig>;
  private readonly fetchImpl: FetchLike;

  constructor(cfg: ParserServiceConfig, fetchImpl?: FetchLike) {
    this.cfg = {
      endpoint: cfg.endpoint,
      dependencyType: cfg.dependencyType ?? DEFAULT_DEPENDENCY_TYPE,
      timeoutMs: cfg.timeoutMs ?? 10_000,
      retries: cfg.retries ?? 3,
      backoffMs: cfg.backoffMs ?? 200,
      concurrency: cfg.concurrency ?? 4,
    };
    this.fetchImpl = fetchImpl ?? (fetch as unknown as FetchLike);
  }

  get config(): Required<ParserServiceConfig> {
    return this.cfg;
  }

  /** One cheap annotation request; throws when the service is unreachable. */
  async probe(): Promise<void> {
    await this.requestOnce("probe");
  }

  /** Annotate one caption with retry and exponential backoff. */
  async annotate(caption: string): Promise<AnnotatedCaption> {
    let lastError: unknown;
    for (let attempt = 0; attempt <= this.cfg.retries; attempt++) {
      try {
        return await this.requestOnce(caption);
      } catch (e) {
        lastError = e;
        if (e instanceof MalformedResponseError || attempt === this.cfg.retries) break;
        await sleep(this.cfg.backoffMs * 2 ** attempt);
      }
    }
    throw lastError;
  }

  private async requestOnce(caption: string): Promise<AnnotatedCaption> {
    const controller = new AbortController();
    const timer = setTimeout(() => controller.abort(), this.cfg.timeoutMs);
    let body: string;
    try {
      const res = await this.fetchImpl(this.cfg.endpoint, {
        method: "POST",
        headers: { "content-type": "application/json" },
        body: JSON.stringify({ text: caption, dependencyType: this.cfg.dependencyType }),
        signal: controller.signal,
      });
      if (!res.ok) {
        throw new Error(`service responded ${res.status}`);
      }
      body = await res.text();
    } finally {
      clearTimeout(timer);
    }
    let parsed: ServiceResponse;
    try {
      parsed = JSON.parse(body) as ServiceResponse;
    } catch {
      throw new MalformedResponseError("response is not JSON");
    }
    return this.convert(parsed);
  }

  private convert(response: ServiceResponse): AnnotatedCaption {
    if (!Array.isArray(response.sentences)) {
      throw new MalformedResponseError("missing sentences array");
    }
    const tokens: string[] = [];
    const triplets: Triplet[] = [];
    for (const sentence of response.sentences) {
      const sentTokens = sentence.tokens;
      if (!Array.isArray(sentTokens)) {
        throw new MalformedResponseError("sentence without tokens");
      }
      const offset = tokens.length;
      for (const tok of sentTokens) {
        tokens.push(String((tok as { word: string }).word));
      }
      const arcs = sentence[this.cfg.dependencyType];
      if (!Array.isArray(arcs)) {
        throw new MalformedResponseError(
          `sentence without '${this.cfg.dependencyType}' arcs`
        );
      }
      for (const arc of arcs as Array<{ dep: string; governor: number; dependent: number }>) {
        // Root arcs are virtual; punct arcs anchor tokens the caption
        // pipeline strips during normalization and carry no phrase signal.
        if (arc.governor === 0 || arc.dep === "punct") continue;
        const gov = offset + arc.governor - 1;
        const dep = offset + arc.dependent - 1;
        if (gov < 0 || dep < 0 || gov >= tokens.length || dep >= tokens.length) {
          throw new MalformedResponseError(
            `arc ${arc.dep}(${arc.governor}, ${arc.dependent}) out of range`
          );
        }
        triplets.push({ rel: String(arc.dep), gov, dep });
      }
    }
    if (tokens.length === 0) {
      throw new MalformedResponseError("no tokens returned");
    }
    return { tokens, triplets };
  }
}

/** Structurally invalid service output; retrying will not help. */
export class MalformedResponseError extends Error {}
