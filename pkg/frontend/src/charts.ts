/** Pure SVG chart builders: pie for single-response summaries, bars for
 * multi-response questions, stacked bars for drill-downs.
 *
 * Every rendered figure carries data-category / data-coords /
 * data-count attributes and a visible count label, so each number on
 * screen is traceable to exactly one cube cell (and testable without a
 * browser). */

import type { ChartSpec, Cube, CubeCell } from "./api.js";

export interface RenderedCount {
  category: string;
  coords: string;
  count: number;
}

const WIDTH = 420;
const HEIGHT = 280;
const PALETTE = [
  "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
  "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
];

function esc(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

export function coordsLabel(cell: CubeCell, groupBy: string[]): string {
  if (groupBy.length === 0) return "all";
  return groupBy.map((dim) => String(cell.coords[dim])).join(" / ");
}

function svgOpen(title: string): string {
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 ${WIDTH} ${HEIGHT}" ` +
    `role="img" aria-label="${esc(title)}">` +
    `<text x="8" y="16" class="chart-title">${esc(title)}</text>`
  );
}

function categoryLabel(spec: ChartSpec, cube: Cube, category: string): string {
  const index = cube.categories.indexOf(category);
  return index >= 0 && spec.categories[index] ? spec.categories[index] : category;
}

function renderPie(spec: ChartSpec, cube: Cube): string {
  const cell = cube.cells[0];
  const cx = 140;
  const cy = 150;
  const r = 100;
  const total = cube.categories.reduce((acc, c) => acc + (cell?.counts[c] ?? 0), 0);
  let svg = svgOpen(spec.title);
  let angle = -Math.PI / 2;
  cube.categories.forEach((category, i) => {
    const count = cell?.counts[category] ?? 0;
    const label = categoryLabel(spec, cube, category);
    const color = PALETTE[i % PALETTE.length];
    if (total > 0 && count > 0) {
      const sweep = (count / total) * 2 * Math.PI;
      const x1 = cx + r * Math.cos(angle);
      const y1 = cy + r * Math.sin(angle);
      angle += sweep;
      const x2 = cx + r * Math.cos(angle);
      const y2 = cy + r * Math.sin(angle);
      const large = sweep > Math.PI ? 1 : 0;
      const d =
        count === total
          ? `M ${cx - r} ${cy} A ${r} ${r} 0 1 1 ${cx + r} ${cy} A ${r} ${r} 0 1 1 ${cx - r} ${cy}`
          : `M ${cx} ${cy} L ${x1} ${y1} A ${r} ${r} 0 ${large} 1 ${x2} ${y2} Z`;
      svg += `<path d="${d}" fill="${color}" data-category="${esc(category)}" data-coords="all" data-count="${count}"></path>`;
    }
    const ly = 48 + i * 20;
    svg +=
      `<rect x="300" y="${ly - 10}" width="12" height="12" fill="${color}"></rect>` +
      `<text x="318" y="${ly}" data-category="${esc(category)}" data-coords="all" data-count="${count}">` +
      `${esc(label)}: ${count}</text>`;
  });
  if (total === 0) svg += `<text x="${cx - 30}" y="${cy}" class="empty">no data</text>`;
  return svg + "</svg>";
}

function renderBars(spec: ChartSpec, cube: Cube): string {
  const cell = cube.cells[0];
  const counts = cube.categories.map((c) => cell?.counts[c] ?? 0);
  const max = Math.max(1, ...counts);
  const slot = (WIDTH - 60) / Math.max(1, cube.categories.length);
  let svg = svgOpen(spec.title);
  cube.categories.forEach((category, i) => {
    const count = counts[i];
    const h = Math.round((count / max) * 180);
    const x = 40 + i * slot;
    const y = 230 - h;
    svg +=
      `<rect x="${x}" y="${y}" width="${Math.max(10, slot - 14)}" height="${h}" ` +
      `fill="${PALETTE[i % PALETTE.length]}" data-category="${esc(category)}" ` +
      `data-coords="all" data-count="${count}"></rect>` +
      `<text x="${x}" y="${y - 4}" data-category="${esc(category)}" data-coords="all" ` +
      `data-count="${count}">${count}</text>` +
      `<text x="${x}" y="248" class="axis">${esc(categoryLabel(spec, cube, category))}</text>`;
  });
  return svg + "</svg>";
}

function renderStacked(spec: ChartSpec, cube: Cube): string {
  const cells = cube.cells;
  const totals = cells.map((cell) =>
    cube.categories.reduce((acc, c) => acc + (cell.counts[c] ?? 0), 0),
  );
  const max = Math.max(1, ...totals);
  const slot = (WIDTH - 60) / Math.max(1, cells.length);
  let svg = svgOpen(spec.title);
  cells.forEach((cell, i) => {
    const coords = coordsLabel(cell, cube.group_by);
    const x = 40 + i * slot;
    let y = 230;
    cube.categories.forEach((category, j) => {
      const count = cell.counts[category] ?? 0;
      const h = Math.round((count / max) * 180);
      y -= h;
      svg +=
        `<rect x="${x}" y="${y}" width="${Math.max(10, slot - 14)}" height="${h}" ` +
        `fill="${PALETTE[j % PALETTE.length]}" data-category="${esc(category)}" ` +
        `data-coords="${esc(coords)}" data-count="${count}">` +
        `<title>${esc(coords)} ${esc(categoryLabel(spec, cube, category))}: ${count}</title></rect>`;
    });
    svg += `<text x="${x}" y="248" class="axis">${esc(coords)}</text>`;
  });
  // legend with per-category totals, so counts stay readable as text
  cube.categories.forEach((category, j) => {
    const total = cells.reduce((acc, cell) => acc + (cell.counts[category] ?? 0), 0);
    const ly = 36 + j * 16;
    svg +=
      `<rect x="300" y="${ly - 9}" width="10" height="10" fill="${PALETTE[j % PALETTE.length]}"></rect>` +
      `<text x="316" y="${ly}" class="legend">${esc(categoryLabel(spec, cube, category))} (${total})</text>`;
  });
  return svg + "</svg>";
}

export function renderChart(spec: ChartSpec, cube: Cube): string {
  if (spec.kind === "pie") return renderPie(spec, cube);
  if (spec.kind === "bar") return renderBars(spec, cube);
  return renderStacked(spec, cube);
}

/** Pull every (category, coords, count) a rendered chart displays. */
export function extractCounts(svg: string): RenderedCount[] {
  const out: RenderedCount[] = [];
  const pattern = /data-category="([^"]*)" data-coords="([^"]*)" data-count="(\d+)"/g;
  let match: RegExpExecArray | null;
  while ((match = pattern.exec(svg)) !== null) {
    out.push({
      category: match[1].replace(/&amp;/g, "&").replace(/&lt;/g, "<").replace(/&gt;/g, ">").replace(/&quot;/g, '"'),
      coords: match[2],
      count: Number(match[3]),
    });
  }
  return out;
}
