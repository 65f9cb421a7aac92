/** HTML-string renderers. Kept free of DOM and fetch so the snapshot tests
 * can diff plain strings.
 */

import type { SearchResponse } from "./api.js";
import type { BarSegments, Pill, ResultView } from "./viewmodel.js";
import { buildViews } from "./viewmodel.js";

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function renderPill(pill: Pill): string {
  const classes = ["pill", `pill-${pill.state}`];
  if (pill.negative) {
    classes.push("pill-negative");
  }
  const badge =
    pill.badge === null
      ? ""
      : `<span class="badge">${escapeHtml(pill.badge)}</span>`;
  return (
    `<span class="${classes.join(" ")}" data-stem="${escapeHtml(pill.stem)}">` +
    `${escapeHtml(pill.word)}${badge}</span>`
  );
}

export function renderBar(bar: BarSegments): string {
  const cls = `<span class="bar-cls" style="width:${bar.clsWidthPct.toFixed(2)}%"></span>`;
  const token = `<span class="bar-token" style="width:${bar.tokenWidthPct.toFixed(2)}%"></span>`;
  const legend =
    `<span class="bar-legend">cls ${bar.clsValue.toFixed(3)}` +
    ` &middot; token ${bar.tokenValue.toFixed(3)}</span>`;
  return `<span class="bar">${cls}${token}</span>${legend}`;
}

export function renderResult(view: ResultView, showRemoved: boolean): string {
  const pills = view.pills
    .filter((pill) => showRemoved || pill.state !== "removed")
    .map(renderPill)
    .join("");
  return (
    `<article class="result" data-doc="${escapeHtml(view.docId)}">` +
    `<header><span class="doc-id">${escapeHtml(view.docId)}</span>` +
    `<span class="total">${view.sTotal.toFixed(3)}</span></header>` +
    `<div class="composition">${renderBar(view.bar)}</div>` +
    `<p class="snippet">${escapeHtml(view.snippet)}</p>` +
    `<div class="pills">${pills}</div>` +
    `</article>`
  );
}

export function renderResults(
  response: SearchResponse,
  showRemoved: boolean,
): string {
  const header =
    `<p class="summary">${response.results.length} results` +
    ` &middot; ${response.candidate_count} candidates` +
    ` &middot; ${escapeHtml(response.workflow)}` +
    ` &middot; ${response.timing_ms.toFixed(1)} ms</p>`;
  const body = buildViews(response)
    .map((view) => renderResult(view, showRemoved))
    .join("");
  return `${header}<div class="results">${body}</div>`;
}

export function renderErrorBanner(
  message: string | null,
  retryable: boolean,
): string {
  if (message === null) {
    return "";
  }
  const retry = retryable ? `<button class="retry">retry</button>` : "";
  return `<div class="error">${escapeHtml(message)}${retry}</div>`;
}
