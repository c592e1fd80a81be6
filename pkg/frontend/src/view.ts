/** Turns a ViewState into the two API queries behind the dashboard:
 * the left panel summarizes all responses of the selected question, the
 * right panel focuses on the selected response, side by side, under the
 * same granularity and demographic filters. */

import type { ManifestInfo } from "./api.js";
import { findQuestion, type ViewState } from "./state.js";

export interface PanelPlan {
  params: URLSearchParams;
  title: string;
}

function baseParams(state: ViewState, target: string): URLSearchParams {
  const params = new URLSearchParams();
  params.set("target", target);
  params.set("level", state.granularity);
  if (state.ageFilter) params.append("filter", `age:${state.ageFilter}`);
  if (state.sexFilter) params.append("filter", `sex:${state.sexFilter}`);
  return params;
}

export function planPanels(
  state: ViewState,
  manifest: ManifestInfo,
): { summary: PanelPlan; focus: PanelPlan } {
  const question = findQuestion(manifest, state.question);
  const summary: PanelPlan = {
    params: baseParams(state, state.question),
    title: "All responses",
  };

  let focus: PanelPlan;
  if (!state.responseFilter || !question) {
    focus = { params: baseParams(state, state.question), title: "Focused view" };
  } else if (question.kind === "group") {
    // focus on one member of the group, e.g. a single allergy
    const member = (question.members ?? []).find((m) => m.column === state.responseFilter);
    focus = {
      params: baseParams(state, state.responseFilter),
      title: member ? member.display : state.responseFilter,
    };
  } else {
    const params = baseParams(state, state.question);
    params.append("filter", `${state.question}:${state.responseFilter}`);
    focus = { params, title: `Response: ${state.responseFilter}` };
  }
  return { summary, focus };
}
