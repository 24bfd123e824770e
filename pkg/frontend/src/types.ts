/** One dependency arc; gov/dep are 0-based token indices. */
export interface Triplet {
  rel: string;
  gov: number;
  dep: number;
}

/** One corpus.jsonl line consumed by the caption pipeline. */
export interface CorpusRecord {
  image_id: string;
  caption: string;
  tokens: string[];
  triplets: Triplet[];
}

/** Connection settings for the annotation service. */
export interface ParserServiceConfig {
  /** Base URL of the annotation endpoint (POST target). */
  endpoint: string;
  /** Dependency style requested from the service. */
  dependencyType?: string;
  /** Per-request timeout in milliseconds. */
  timeoutMs?: number;
  /** Retry attempts per caption after the first try. */
  retries?: number;
  /** Base backoff delay in milliseconds (doubles per attempt). */
  backoffMs?: number;
  /** Maximum concurrent in-flight requests. */
  concurrency?: number;
}

export const DEFAULT_DEPENDENCY_TYPE = "collapsed-ccprocessed-dependencies";

export interface AnnotatedCaption {
  tokens: string[];
  triplets: Triplet[];
}

/** Wire format returned by the annotation service. Token indices in the
 * dependency arcs are 1-based within their sentence; governor 0 is the
 * virtual root. */
export interface ServiceResponse {
  sentences: Array<{
    tokens: Array<{ index: number; word: string }>;
    [dependencyKey: string]:
      | Array<{ dep: string; governor: number; dependent: number }>
      | Array<{ index: number; word: string }>;
  }>;
}

/** Per-caption failure entry in the errors manifest. */
export interface FailedRecord {
  line: number;
  image_id: string;
  caption: string;
  reason: string;
}

export interface ParseManifest {
  total: number;
  completed: number;
  failed: FailedRecord[];
  aborted: boolean;
  reason?: string;
}
