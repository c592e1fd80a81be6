import { describe, expect, it } from "vitest";

import type { ChartSpec, Cube } from "../src/api.js";
import { extractCounts, renderChart } from "../src/charts.js";

const provenance = { snapshot_id: "s", built_at: "t", loaded_at: 0, stale: false };

function countsByKey(svg: string): Map<string, number> {
  const map = new Map<string, number>();
  for (const { category, coords, count } of extractCounts(svg)) {
    const key = `${coords}|${category}`;
    if (map.has(key)) expect(map.get(key)).toBe(count); // duplicates must agree
    map.set(key, count);
  }
  return map;
}

describe("pie charts", () => {
  const cube: Cube = {
    target: "allergic_to_eggs",
    kind: "single",
    group_by: [],
    categories: ["yes", "no", "don't know", "unknown"],
    cells: [
      { coords: {}, counts: { yes: 3, no: 5, "don't know": 1, unknown: 0 }, total: 9 },
    ],
    provenance,
  };
  const spec: ChartSpec = {
    kind: "pie",
    title: "Eggs",
    categories: ["yes", "no", "don't know", "unknown"],
    series: [],
  };

  it("shows every category count verbatim", () => {
    const rendered = countsByKey(renderChart(spec, cube));
    expect(rendered.get("all|yes")).toBe(3);
    expect(rendered.get("all|no")).toBe(5);
    expect(rendered.get("all|don't know")).toBe(1);
    expect(rendered.get("all|unknown")).toBe(0);
  });

  it("renders an empty circle note when there is no data", () => {
    const empty: Cube = {
      ...cube,
      cells: [{ coords: {}, counts: { yes: 0, no: 0, "don't know": 0, unknown: 0 }, total: 0 }],
    };
    const svg = renderChart(spec, empty);
    expect(svg).toContain("no data");
    expect([...countsByKey(svg).values()]).toEqual([0, 0, 0, 0]);
  });
});

describe("bar charts", () => {
  it("labels one bar per question-group member", () => {
    const cube: Cube = {
      target: "allergy_food",
      kind: "group",
      group_by: [],
      categories: ["allergic_to_nuts", "allergic_to_eggs"],
      cells: [{ coords: {}, counts: { allergic_to_nuts: 2, allergic_to_eggs: 7 }, total: 10 }],
      provenance,
    };
    const spec: ChartSpec = {
      kind: "bar",
      title: "Common food allergies",
      categories: ["Nuts", "Eggs"],
      series: [],
    };
    const svg = renderChart(spec, cube);
    const rendered = countsByKey(svg);
    expect(rendered.get("all|allergic_to_nuts")).toBe(2);
    expect(rendered.get("all|allergic_to_eggs")).toBe(7);
    expect(svg).toContain(">Nuts<");
  });
});

describe("stacked bar charts", () => {
  it("keeps one segment per coordinate and category", () => {
    const cube: Cube = {
      target: "allergic_to_eggs",
      kind: "single",
      group_by: ["age", "sex"],
      categories: ["yes", "no", "don't know", "unknown"],
      cells: [
        { coords: { age: 6, sex: "F" }, counts: { yes: 1, no: 2, "don't know": 0, unknown: 0 }, total: 3 },
        { coords: { age: 7, sex: "M" }, counts: { yes: 4, no: 0, "don't know": 1, unknown: 2 }, total: 7 },
      ],
      provenance,
    };
    const spec: ChartSpec = {
      kind: "stacked-bar",
      title: "Eggs",
      categories: ["yes", "no", "don't know", "unknown"],
      series: ["6 / F", "7 / M"],
    };
    const rendered = countsByKey(renderChart(spec, cube));
    expect(rendered.get("6 / F|yes")).toBe(1);
    expect(rendered.get("6 / F|no")).toBe(2);
    expect(rendered.get("7 / M|yes")).toBe(4);
    expect(rendered.get("7 / M|unknown")).toBe(2);
    expect(rendered.size).toBe(8);
  });
});
