import { toJsonl } from "./jsonl.js";
import { mulberry32, uniform } from "./rng.js";
import { CorpusRecord, Triplet } from "./types.js";

type Parsed = { caption: string; tokens: string[]; triplets: Array<[string, number, number]> };

// Hand-authored parses in the raw casing the annotation service would emit;
// the consuming pipeline lowercases and strips punctuation itself.
const PARSED_CAPTIONS: Parsed[] = [
  {
    caption: "The man in the gray shirt and sandals is pulling the large tricycle.",
    tokens: ["The", "man", "in", "the", "gray", "shirt", "and", "sandals", "is", "pulling", "the", "large", "tricycle", "."],
    triplets: [
      ["det", 1, 0], ["nsubj", 9, 1], ["case", 5, 2], ["det", 5, 3], ["amod", 5, 4],
      ["nmod:in", 1, 5], ["cc", 5, 6], ["conj:and", 5, 7], ["aux", 9, 8],
      ["det", 12, 10], ["amod", 12, 11], ["dobj", 9, 12],
    ],
  },
  {
    caption: "A red dog runs in the green park.",
    tokens: ["A", "red", "dog", "runs", "in", "the", "green", "park", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["case", 7, 4],
      ["det", 7, 5], ["amod", 7, 6], ["nmod:in", 3, 7],
    ],
  },
  {
    caption: "The small cat sleeps on a warm mat.",
    tokens: ["The", "small", "cat", "sleeps", "on", "a", "warm", "mat", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["case", 7, 4],
      ["det", 7, 5], ["amod", 7, 6], ["nmod:on", 3, 7],
    ],
  },
  {
    caption: "Two big dogs play near the cold water.",
    tokens: ["Two", "big", "dogs", "play", "near", "the", "cold", "water", "."],
    triplets: [
      ["nummod", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["case", 7, 4],
      ["det", 7, 5], ["amod", 7, 6], ["nmod:near", 3, 7],
    ],
  },
  {
    caption: "A black bird flies far away.",
    tokens: ["A", "black", "bird", "flies", "far", "away", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["advmod", 3, 4], ["advmod", 3, 5],
    ],
  },
  {
    caption: "The happy woman walks home quietly.",
    tokens: ["The", "happy", "woman", "walks", "home", "quietly", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["advmod", 3, 4], ["advmod", 3, 5],
    ],
  },
  {
    caption: "A young child smiles brightly today.",
    tokens: ["A", "young", "child", "smiles", "brightly", "today", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["advmod", 3, 4], ["advmod", 3, 5],
    ],
  },
  {
    caption: "The gray wolf howls loudly tonight.",
    tokens: ["The", "gray", "wolf", "howls", "loudly", "tonight", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["advmod", 3, 4], ["advmod", 3, 5],
    ],
  },
  {
    caption: "A tall man rides quickly past.",
    tokens: ["A", "tall", "man", "rides", "quickly", "past", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["advmod", 3, 4], ["advmod", 3, 5],
    ],
  },
  {
    caption: "The blue boat floats slowly along.",
    tokens: ["The", "blue", "boat", "floats", "slowly", "along", "."],
    triplets: [
      ["det", 2, 0], ["amod", 2, 1], ["nsubj", 3, 2], ["advmod", 3, 4], ["advmod", 3, 5],
    ],
  },
];

export interface ToyDataset {
  corpus: string;
  features: string;
  splits: string;
  records: CorpusRecord[];
}

/** Deterministic synthetic dataset: round-robin hand-parsed captions plus
 * seeded uniform feature vectors of dimension d.  Identical arguments give
 * byte-identical output. */
export function makeToyDataset(nImages: number, d: number, seed: number): ToyDataset {
  if (nImages < 1 || d < 1) {
    throw new Error("nImages and d must be >= 1");
  }
  const rand = mulberry32(seed);
  const records: CorpusRecord[] = [];
  const featureRows: Array<{ image_id: string; feat: number[] }> = [];
  const ids: string[] = [];
  for (let i = 0; i < nImages; i++) {
    const imageId = `img${String(i).padStart(2, "0")}`;
    ids.push(imageId);
    const parsed = PARSED_CAPTIONS[i % PARSED_CAPTIONS.length];
    const triplets: Triplet[] = parsed.triplets.map(([rel, gov, dep]) => ({ rel, gov, dep }));
    records.push({
      image_id: imageId,
      caption: parsed.caption,
      tokens: [...parsed.tokens],
      triplets,
    });
    featureRows.push({
      image_id: imageId,
      feat: Array.from({ length: d }, () => uniform(rand, -1, 1)),
    });
  }
  return {
    corpus: toJsonl(records),
    features: toJsonl(featureRows),
    splits: JSON.stringify({ train: ids, val: ids, test: ids }, null, 1) + "\n",
    records,
  };
}
