/** Console state and its reducer.
 *
 * The one rule that matters: a failed search never clears the previous
 * results, it only raises the banner. Rendering is derived from state so
 * the rule is testable without a browser.
 */

import type { SearchResponse } from "./api.js";
import { renderErrorBanner, renderResults } from "./render.js";

export interface AppState {
  lastResponse: SearchResponse | null;
  error: string | null;
  retryable: boolean;
  showRemoved: boolean;
}

export const initialState: AppState = {
  lastResponse: null,
  error: null,
  retryable: false,
  showRemoved: false,
};

export type SearchOutcome =
  | { ok: true; response: SearchResponse }
  | { ok: false; message: string; retryable: boolean };

export function applyOutcome(state: AppState, outcome: SearchOutcome): AppState {
  if (outcome.ok) {
    return {
      ...state,
      lastResponse: outcome.response,
      error: null,
      retryable: false,
    };
  }
  return {
    ...state,
    error: outcome.message,
    retryable: outcome.retryable,
  };
}

export function setShowRemoved(state: AppState, showRemoved: boolean): AppState {
  return { ...state, showRemoved };
}

export interface AppView {
  results: string;
  banner: string;
}

export function renderApp(state: AppState): AppView {
  return {
    results:
      state.lastResponse === null
        ? ""
        : renderResults(state.lastResponse, state.showRemoved),
    banner: renderErrorBanner(state.error, state.retryable),
  };
}
