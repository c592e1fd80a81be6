/** View state and its URL encoding. The whole view is captured in the
 * query string, so any combination of controls is a shareable link. */

import type { ManifestInfo, QuestionInfo } from "./api.js";

export const GRANULARITIES = ["rolled-up", "age", "sex", "age-then-sex"] as const;
export type Granularity = (typeof GRANULARITIES)[number];

export interface ViewState {
  question: string;
  granularity: Granularity;
  ageFilter: string | null;
  sexFilter: string | null;
  /** A member column for group questions, or a response category for
   * single questions. Its option list always follows the selected
   * question; a value carried over from another question is dropped. */
  responseFilter: string | null;
}

export interface ResponseOption {
  value: string;
  label: string;
}

export function findQuestion(manifest: ManifestInfo, name: string): QuestionInfo | undefined {
  return manifest.questions.find((q) => q.name === name);
}

export function defaultState(manifest: ManifestInfo): ViewState {
  return {
    question: manifest.questions[0]?.name ?? "",
    granularity: "rolled-up",
    ageFilter: null,
    sexFilter: null,
    responseFilter: null,
  };
}

/** The response-filter dropdown options for one question: member columns
 * of a group question, answer categories of a single one. */
export function responseOptions(
  question: QuestionInfo,
  responseCategories: string[],
): ResponseOption[] {
  if (question.kind === "group") {
    return (question.members ?? []).map((m) => ({ value: m.column, label: m.display }));
  }
  return responseCategories
    .filter((c) => c !== "unknown")
    .map((c) => ({ value: c, label: c }));
}

export function encodeState(state: ViewState): URLSearchParams {
  const params = new URLSearchParams();
  params.set("q", state.question);
  if (state.granularity !== "rolled-up") params.set("g", state.granularity);
  if (state.ageFilter) params.set("age", state.ageFilter);
  if (state.sexFilter) params.set("sex", state.sexFilter);
  if (state.responseFilter) params.set("r", state.responseFilter);
  return params;
}

export function decodeState(params: URLSearchParams, manifest: ManifestInfo): ViewState {
  const fallback = defaultState(manifest);
  const question = findQuestion(manifest, params.get("q") ?? "") ? params.get("q")! : fallback.question;
  const g = params.get("g") ?? "rolled-up";
  const granularity = (GRANULARITIES as readonly string[]).includes(g)
    ? (g as Granularity)
    : "rolled-up";
  const info = findQuestion(manifest, question);
  let responseFilter = params.get("r");
  if (responseFilter && info) {
    const allowed = responseOptions(info, manifest.response_categories).map((o) => o.value);
    if (!allowed.includes(responseFilter)) responseFilter = null;
  }
  const age = params.get("age");
  const sex = params.get("sex");
  return {
    question,
    granularity,
    ageFilter: age && manifest.demographics.age?.includes(age) ? age : null,
    sexFilter: sex && manifest.demographics.sex?.includes(sex) ? sex : null,
    responseFilter,
  };
}
