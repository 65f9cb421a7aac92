/** Canned service responses used across the test files. */

import type { SearchResponse, SearchResult, WordAttribution } from "../src/api.js";

export function word(
  wordText: string,
  overrides: Partial<WordAttribution> = {},
): WordAttribution {
  return {
    word: wordText,
    stem: wordText.toLowerCase(),
    removed: false,
    matched: false,
    contribution: null,
    ...overrides,
  };
}

/** Three matched words scored 12.9 / 14.2 / 6.6 plus plain and removed ones. */
export const THREE_MATCH_RESULT: SearchResult = {
  doc_id: "docA",
  snippet: "Retrieval engines mix dense and sparse signals.",
  s_total: 31.2,
  s_cls: 18.4,
  s_token: 33.7,
  sigma_gamma: 0.42,
  words: [
    word("Retrieval", { matched: true, contribution: 12.9 }),
    word("engines"),
    word("mix", { matched: true, contribution: 14.2 }),
    word("dense", { matched: true, contribution: 6.6 }),
    word("the", { removed: true }),
    word("of", { removed: true }),
  ],
};

export const NEGATIVE_MATCH_RESULT: SearchResult = {
  doc_id: "docB",
  snippet: "An off-topic passage that still surfaced.",
  s_total: 2.1,
  s_cls: 6.0,
  s_token: -0.8,
  sigma_gamma: 0.42,
  words: [
    word("off", { matched: true, contribution: -0.8 }),
    word("topic"),
    word("passage", { removed: true }),
  ],
};

export const ZERO_MATCH_RESULT: SearchResult = {
  doc_id: "docC",
  snippet: "Nothing here matches the query.",
  s_total: 4.2,
  s_cls: 4.2,
  s_token: 0.0,
  sigma_gamma: 0.42,
  words: [word("nothing"), word("here"), word("matches", { removed: true })],
};

export const RESPONSE: SearchResponse = {
  query: "dense retrieval",
  workflow: "DENSE_THEN_TOKEN",
  candidate_count: 87,
  results: [THREE_MATCH_RESULT, NEGATIVE_MATCH_RESULT, ZERO_MATCH_RESULT],
  timing_ms: 12.75,
};

/** Tiny deterministic PRNG so property-style loops are reproducible. */
export function mulberry32(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a = (a + 0x6d2b79f5) >>> 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

const WORD_POOL = [
  "alpha", "beta", "gamma", "delta", "letter", "common", "signal",
  "sparse", "dense", "token", "gate", "word", "query", "passage",
];

export function randomResult(rand: () => number, docId: string): SearchResult {
  const count = 1 + Math.floor(rand() * 8);
  const words: WordAttribution[] = [];
  for (let i = 0; i < count; i += 1) {
    const text = WORD_POOL[Math.floor(rand() * WORD_POOL.length)] as string;
    const roll = rand();
    if (roll < 0.4) {
      words.push(word(text, {
        matched: true,
        contribution: Math.round((rand() * 40 - 10) * 10) / 10,
      }));
    } else if (roll < 0.7) {
      words.push(word(text));
    } else {
      words.push(word(text, { removed: true }));
    }
  }
  return {
    doc_id: docId,
    snippet: "synthetic passage",
    s_total: rand() * 30,
    s_cls: rand() * 20,
    s_token: rand() * 40 - 5,
    sigma_gamma: rand(),
    words,
  };
}
