/** Pure presentation logic: response JSON in, display structures out.
 *
 * Nothing here scores anything. The only arithmetic is the blend split the
 * service already applied (sigma * s_cls vs (1 - sigma) * s_token) and the
 * normalization of those two values into bar segment widths.
 */

import type { SearchResult, SearchResponse, WordAttribution } from "./api.js";

export type PillState = "matched" | "plain" | "removed";

export interface Pill {
  word: string;
  stem: string;
  state: PillState;
  /** Contribution at one decimal; null for pills without a score badge. */
  badge: string | null;
  contribution: number | null;
  negative: boolean;
}

export interface BarSegments {
  /** sigma_gamma * s_cls, straight from response fields. */
  clsValue: number;
  /** (1 - sigma_gamma) * s_token, straight from response fields. */
  tokenValue: number;
  /** Widths proportional to the absolute segment values, summing to 100. */
  clsWidthPct: number;
  tokenWidthPct: number;
}

export interface ResultView {
  docId: string;
  snippet: string;
  sTotal: number;
  bar: BarSegments;
  pills: Pill[];
}

export function formatBadge(contribution: number): string {
  return contribution.toFixed(1);
}

function toPill(w: WordAttribution): Pill {
  const matched = w.matched && w.contribution !== null;
  return {
    word: w.word,
    stem: w.stem,
    state: w.removed ? "removed" : matched ? "matched" : "plain",
    badge: matched ? formatBadge(w.contribution as number) : null,
    contribution: w.contribution,
    negative: matched && (w.contribution as number) < 0,
  };
}

/** Matched pills by contribution descending, then plain, removed last.
 *
 * Ties and the unscored groups keep the response's own order, so the pill
 * list is always a permutation of the response words.
 */
export function orderPills(words: WordAttribution[]): Pill[] {
  const pills = words.map(toPill);
  const rank = (p: Pill) =>
    p.state === "removed" ? 2 : p.contribution === null ? 1 : 0;
  return pills
    .map((pill, i) => ({ pill, i }))
    .sort((a, b) => {
      const byGroup = rank(a.pill) - rank(b.pill);
      if (byGroup !== 0) {
        return byGroup;
      }
      if (a.pill.contribution !== null && b.pill.contribution !== null &&
          a.pill.contribution !== b.pill.contribution) {
        return b.pill.contribution - a.pill.contribution;
      }
      return a.i - b.i;
    })
    .map((entry) => entry.pill);
}

export function scoreBar(result: SearchResult): BarSegments {
  const clsValue = result.sigma_gamma * result.s_cls;
  const tokenValue = (1 - result.sigma_gamma) * result.s_token;
  const mass = Math.abs(clsValue) + Math.abs(tokenValue);
  if (mass === 0) {
    return { clsValue, tokenValue, clsWidthPct: 0, tokenWidthPct: 0 };
  }
  return {
    clsValue,
    tokenValue,
    clsWidthPct: (100 * Math.abs(clsValue)) / mass,
    tokenWidthPct: (100 * Math.abs(tokenValue)) / mass,
  };
}

export function buildResultView(result: SearchResult): ResultView {
  return {
    docId: result.doc_id,
    snippet: result.snippet,
    sTotal: result.s_total,
    bar: scoreBar(result),
    pills: orderPills(result.words),
  };
}

export function buildViews(response: SearchResponse): ResultView[] {
  return response.results.map(buildResultView);
}
