/** Deterministic PRNG (mulberry32): one 32-bit seed, identical streams on
 * every platform, good enough for synthetic feature vectors. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = a;
    t = Math.imul(t ^ (t >>> 15), t | 1);
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61);
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

/** Uniform draw in [lo, hi) rounded to 6 decimals for stable serialization. */
export function uniform(rand: () => number, lo: number, hi: number): number {
  return Math.round((lo + (hi - lo) * rand()) * 1e6) / 1e6;
}
