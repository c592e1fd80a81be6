/** Dashboard wiring: dropdown controls on the panels drive OLAP queries;
 * the left chart summarizes every response, the right chart focuses on
 * the selected one. State lives in the URL; stale responses from
 * superseded control changes are dropped (last write wins). */

import { ApiClient, ApiError, type ManifestInfo, type QueryResponse } from "./api.js";
import { renderChart } from "./charts.js";
import {
  GRANULARITIES,
  decodeState,
  defaultState,
  encodeState,
  findQuestion,
  responseOptions,
  type ViewState,
} from "./state.js";
import { planPanels } from "./view.js";

const api = new ApiClient("");
let manifest: ManifestInfo;
let state: ViewState;
let requestSeq = 0;

function byId<T extends HTMLElement>(id: string): T {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function fillSelect(
  select: HTMLSelectElement,
  options: { value: string; label: string }[],
  selected: string | null,
  emptyLabel?: string,
): void {
  select.innerHTML = "";
  if (emptyLabel !== undefined) {
    const opt = document.createElement("option");
    opt.value = "";
    opt.textContent = emptyLabel;
    select.appendChild(opt);
  }
  for (const { value, label } of options) {
    const opt = document.createElement("option");
    opt.value = value;
    opt.textContent = label;
    if (value === selected) opt.selected = true;
    select.appendChild(opt);
  }
}

function renderControls(): void {
  fillSelect(
    byId<HTMLSelectElement>("question"),
    manifest.questions.map((q) => ({ value: q.name, label: q.display })),
    state.question,
  );
  fillSelect(
    byId<HTMLSelectElement>("granularity"),
    GRANULARITIES.map((g) => ({ value: g, label: g })),
    state.granularity,
  );
  fillSelect(
    byId<HTMLSelectElement>("age-filter"),
    (manifest.demographics.age ?? []).map((v) => ({ value: v, label: v })),
    state.ageFilter,
    "all ages",
  );
  fillSelect(
    byId<HTMLSelectElement>("sex-filter"),
    (manifest.demographics.sex ?? []).map((v) => ({ value: v, label: v })),
    state.sexFilter,
    "all",
  );
  const question = findQuestion(manifest, state.question);
  fillSelect(
    byId<HTMLSelectElement>("response-filter"),
    question ? responseOptions(question, manifest.response_categories) : [],
    state.responseFilter,
    "all responses",
  );
}

function showFreshness(response: QueryResponse | null, error?: string): void {
  const banner = byId<HTMLElement>("freshness");
  if (error) {
    banner.className = "banner stale";
    banner.textContent = `showing stale data: ${error}`;
    return;
  }
  if (!response) return;
  const p = response.provenance;
  banner.className = p.stale ? "banner stale" : "banner";
  banner.textContent = `snapshot ${p.snapshot_id ?? "none"} built ${p.built_at ?? "never"}${p.stale ? " (stale)" : ""}`;
}

async function refresh(): Promise<void> {
  const seq = ++requestSeq;
  const plans = planPanels(state, manifest);
  try {
    const [summary, focus] = await Promise.all([
      api.runQuery(plans.summary.params),
      api.runQuery(plans.focus.params),
    ]);
    if (seq !== requestSeq) return; // superseded by a newer control change
    byId("summary-chart").innerHTML = renderChart(summary.chart, summary.cube);
    byId("focus-chart").innerHTML = renderChart(focus.chart, focus.cube);
    byId("summary-caption").textContent = plans.summary.title;
    byId("focus-caption").textContent = plans.focus.title;
    showFreshness(summary);
  } catch (err) {
    if (seq !== requestSeq) return;
    showFreshness(null, err instanceof ApiError ? err.message : String(err));
  }
}

function pushStateToUrl(): void {
  const qs = encodeState(state).toString();
  window.history.replaceState(null, "", qs ? `?${qs}` : window.location.pathname);
}

function onControlChange(): void {
  const question = byId<HTMLSelectElement>("question").value;
  const questionChanged = question !== state.question;
  state = {
    question,
    granularity: byId<HTMLSelectElement>("granularity").value as ViewState["granularity"],
    ageFilter: byId<HTMLSelectElement>("age-filter").value || null,
    sexFilter: byId<HTMLSelectElement>("sex-filter").value || null,
    responseFilter: questionChanged
      ? null // the option list changes with the question
      : byId<HTMLSelectElement>("response-filter").value || null,
  };
  renderControls();
  pushStateToUrl();
  void refresh();
}

async function boot(): Promise<void> {
  try {
    manifest = await api.fetchManifest();
  } catch (err) {
    showFreshness(null, err instanceof ApiError ? err.message : String(err));
    return;
  }
  state = manifest.questions.length
    ? decodeState(new URLSearchParams(window.location.search), manifest)
    : defaultState(manifest);
  renderControls();
  for (const id of ["question", "granularity", "age-filter", "sex-filter", "response-filter"]) {
    byId<HTMLSelectElement>(id).addEventListener("change", onControlChange);
  }
  await refresh();
}

void boot();
