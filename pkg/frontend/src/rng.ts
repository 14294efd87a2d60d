/** Small deterministic PRNG (mulberry32) for reproducible action sequences
 * in tests and demos. Not used for any environment numerics. */

export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function randBelow(rand: () => number, n: number): number {
  return Math.floor(rand() * n);
}
