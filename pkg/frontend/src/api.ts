/** Types and client for the engine's JSON-over-HTTP contract.
 *
 * Every shape here mirrors a service response field for field; the console
 * never computes a score of its own, so this file is the single place where
 * numbers enter the UI.
 */

export interface WordAttribution {
  word: string;
  stem: string;
  removed: boolean;
  matched: boolean;
  contribution: number | null;
}

export interface SearchResult {
  doc_id: string;
  snippet: string;
  s_total: number;
  s_cls: number;
  s_token: number;
  sigma_gamma: number;
  words: WordAttribution[];
}

export interface SearchResponse {
  query: string;
  workflow: string;
  candidate_count: number;
  results: SearchResult[];
  timing_ms: number;
}

export interface SearchParams {
  query: string;
  workflow: string;
  k: number;
  k_cand?: number;
}

export interface ConsoleConfig {
  baseUrl: string;
}

export const DEFAULT_BASE_URL = "http://127.0.0.1:7878";

/** Service-reported failure: keeps the error body verbatim for display. */
export class ServiceError extends Error {
  constructor(
    message: string,
    readonly status: number | null,
    readonly retryable: boolean,
  ) {
    super(message);
    this.name = "ServiceError";
  }
}

/** A search superseded by a newer one; callers drop it silently. */
export class CancelledError extends Error {
  constructor() {
    super("search cancelled by a newer request");
    this.name = "CancelledError";
  }
}

function fail(where: string): never {
  throw new ServiceError(`malformed response: ${where}`, null, false);
}

function asObject(value: unknown, where: string): Record<string, unknown> {
  if (typeof value !== "object" || value === null || Array.isArray(value)) {
    fail(where);
  }
  return value as Record<string, unknown>;
}

function asNumber(value: unknown, where: string): number {
  if (typeof value !== "number" || !Number.isFinite(value)) {
    fail(where);
  }
  return value;
}

function asString(value: unknown, where: string): string {
  if (typeof value !== "string") {
    fail(where);
  }
  return value;
}

function parseWord(value: unknown, where: string): WordAttribution {
  const raw = asObject(value, where);
  const contribution =
    raw.contribution === null
      ? null
      : asNumber(raw.contribution, `${where}.contribution`);
  if (typeof raw.removed !== "boolean" || typeof raw.matched !== "boolean") {
    fail(`${where}.flags`);
  }
  return {
    word: asString(raw.word, `${where}.word`),
    stem: asString(raw.stem, `${where}.stem`),
    removed: raw.removed,
    matched: raw.matched,
    contribution,
  };
}

function parseResult(value: unknown, where: string): SearchResult {
  const raw = asObject(value, where);
  if (!Array.isArray(raw.words)) {
    fail(`${where}.words`);
  }
  return {
    doc_id: asString(raw.doc_id, `${where}.doc_id`),
    snippet: asString(raw.snippet, `${where}.snippet`),
    s_total: asNumber(raw.s_total, `${where}.s_total`),
    s_cls: asNumber(raw.s_cls, `${where}.s_cls`),
    s_token: asNumber(raw.s_token, `${where}.s_token`),
    sigma_gamma: asNumber(raw.sigma_gamma, `${where}.sigma_gamma`),
    words: raw.words.map((w, i) => parseWord(w, `${where}.words[${i}]`)),
  };
}

export function parseSearchResponse(value: unknown): SearchResponse {
  const raw = asObject(value, "response");
  if (!Array.isArray(raw.results)) {
    fail("response.results");
  }
  return {
    query: asString(raw.query, "response.query"),
    workflow: asString(raw.workflow, "response.workflow"),
    candidate_count: asNumber(raw.candidate_count, "response.candidate_count"),
    results: raw.results.map((r, i) => parseResult(r, `response.results[${i}]`)),
    timing_ms: asNumber(raw.timing_ms, "response.timing_ms"),
  };
}

async function errorMessage(response: Response): Promise<string> {
  try {
    const body = (await response.json()) as { error?: unknown };
    if (typeof body.error === "string") {
      return body.error;
    }
  } catch {
    // fall through to the status line
  }
  return `service returned HTTP ${response.status}`;
}

export class SearchClient {
  private inflight: AbortController | null = null;

  constructor(
    readonly baseUrl: string,
    private readonly fetchImpl: typeof fetch = fetch,
  ) {}

  /** POST /v1/search. A newer call aborts any still-running older one. */
  async search(params: SearchParams): Promise<SearchResponse> {
    this.inflight?.abort();
    const controller = new AbortController();
    this.inflight = controller;

    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}/v1/search`, {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify(params),
        signal: controller.signal,
      });
    } catch (err) {
      if (controller.signal.aborted) {
        throw new CancelledError();
      }
      throw new ServiceError(`cannot reach service: ${String(err)}`, null, true);
    }
    if (controller.signal.aborted) {
      throw new CancelledError();
    }
    if (!response.ok) {
      // 5xx is worth a retry; 4xx means the request itself is wrong
      throw new ServiceError(
        await errorMessage(response),
        response.status,
        response.status >= 500,
      );
    }
    return parseSearchResponse(await response.json());
  }

  async stats(): Promise<Record<string, unknown>> {
    return this.getJson("/v1/stats");
  }

  async doc(docId: string): Promise<{ doc_id: string; text: string }> {
    const raw = await this.getJson(`/v1/doc/${encodeURIComponent(docId)}`);
    return {
      doc_id: asString(raw.doc_id, "doc.doc_id"),
      text: asString(raw.text, "doc.text"),
    };
  }

  private async getJson(path: string): Promise<Record<string, unknown>> {
    let response: Response;
    try {
      response = await this.fetchImpl(`${this.baseUrl}${path}`);
    } catch (err) {
      throw new ServiceError(`cannot reach service: ${String(err)}`, null, true);
    }
    if (!response.ok) {
      throw new ServiceError(
        await errorMessage(response),
        response.status,
        response.status >= 500,
      );
    }
    return asObject(await response.json(), path);
  }
}

/** Read config.json next to the page; missing file means defaults. */
export async function loadConfig(
  fetchImpl: typeof fetch = fetch,
): Promise<ConsoleConfig> {
  try {
    const response = await fetchImpl("config.json");
    if (!response.ok) {
      return { baseUrl: DEFAULT_BASE_URL };
    }
    const raw = asObject(await response.json(), "config");
    return {
      baseUrl:
        typeof raw.baseUrl === "string" && raw.baseUrl !== ""
          ? raw.baseUrl.replace(/\/$/, "")
          : DEFAULT_BASE_URL,
    };
  } catch {
    return { baseUrl: DEFAULT_BASE_URL };
  }
}
