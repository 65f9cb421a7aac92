/** Browser entry point: wires the controls to the client and the renderers.
 * Everything with behavior worth testing lives in the imported modules.
 */

import { CancelledError, SearchClient, ServiceError, loadConfig } from "./api.js";
import type { SearchParams } from "./api.js";
import {
  applyOutcome,
  initialState,
  renderApp,
  setShowRemoved,
} from "./app.js";
import type { AppState } from "./app.js";

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (el === null) {
    throw new Error(`missing element #${id}`);
  }
  return el as T;
}

async function init(): Promise<void> {
  const config = await loadConfig();
  const client = new SearchClient(config.baseUrl);

  const form = byId<HTMLFormElement>("search-form");
  const queryBox = byId<HTMLInputElement>("query");
  const workflowSelect = byId<HTMLSelectElement>("workflow");
  const kSlider = byId<HTMLInputElement>("k");
  const kLabel = byId<HTMLElement>("k-value");
  const removedToggle = byId<HTMLInputElement>("show-removed");
  const resultsDiv = byId<HTMLElement>("results");
  const bannerDiv = byId<HTMLElement>("banner");

  let state: AppState = initialState;
  let lastParams: SearchParams | null = null;

  function paint(): void {
    const view = renderApp(state);
    resultsDiv.innerHTML = view.results;
    bannerDiv.innerHTML = view.banner;
  }

  async function runSearch(params: SearchParams): Promise<void> {
    lastParams = params;
    try {
      const response = await client.search(params);
      state = applyOutcome(state, { ok: true, response });
    } catch (err) {
      if (err instanceof CancelledError) {
        return;
      }
      const retryable = err instanceof ServiceError ? err.retryable : true;
      state = applyOutcome(state, {
        ok: false,
        message: err instanceof Error ? err.message : String(err),
        retryable,
      });
    }
    paint();
  }

  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const query = queryBox.value.trim();
    if (query === "") {
      return;
    }
    void runSearch({
      query,
      workflow: workflowSelect.value,
      k: Number(kSlider.value),
    });
  });

  kSlider.addEventListener("input", () => {
    kLabel.textContent = kSlider.value;
  });

  removedToggle.addEventListener("change", () => {
    state = setShowRemoved(state, removedToggle.checked);
    paint();
  });

  bannerDiv.addEventListener("click", (event) => {
    const target = event.target as HTMLElement;
    if (target.classList.contains("retry") && lastParams !== null) {
      void runSearch(lastParams);
    }
  });

  kLabel.textContent = kSlider.value;
  paint();
}

void init();
