/** Differential acceptance check against a live API: for scripted view
 * states, every count a chart renders must equal the corresponding
 * /olap/query response, and the chart kinds must follow the engine's
 * rules (pie for a rolled-up single question, bar for a rolled-up
 * question group, stacked bar for any drill-down). */

import { spawn, spawnSync, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync, writeFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join, resolve } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, type ManifestInfo, type QueryResponse } from "../src/api.js";
import { coordsLabel, extractCounts, renderChart } from "../src/charts.js";
import { decodeState, encodeState, type ViewState } from "../src/state.js";
import { planPanels } from "../src/view.js";

const REPO = resolve(__dirname, "..", "..");
const DATA = join(REPO, "src", "chatmart", "data");
const PORT = 8720 + (process.pid % 200);
const BASE = `http://127.0.0.1:${PORT}`;

let server: ChildProcess | undefined;
let workdir: string;
const api = new ApiClient(BASE);
let manifest: ManifestInfo;

function seedCorpus(dataDir: string): void {
  const code = `
from pathlib import Path
from chatmart.bench import GeneratorConfig, generate
from chatmart.docstore import DocumentStore
from chatmart.etl import EtlPipeline
from chatmart.warehouse import load_manifest_file

data_dir = Path(${JSON.stringify(dataDir)})
store = DocumentStore(data_dir / "store")
generate(GeneratorConfig(count=400, seed=42, p_missing_demographic=0.05), store)
manifest = load_manifest_file(${JSON.stringify(join(DATA, "manifest.json"))})
run = EtlPipeline(store, manifest, data_dir / "etl", data_dir / "schema.snapshot").run("full")
assert run.status == "succeeded", run.error
`;
  const result = spawnSync("python3", ["-c", code], { encoding: "utf-8" });
  if (result.status !== 0) {
    throw new Error(`seeding failed: ${result.stderr}`);
  }
}

async function waitForServer(): Promise<void> {
  const deadline = Date.now() + 30_000;
  while (Date.now() < deadline) {
    try {
      const r = await fetch(`${BASE}/healthz`);
      if (r.ok) return;
    } catch {
      /* not up yet */
    }
    await new Promise((resolveSleep) => setTimeout(resolveSleep, 200));
  }
  throw new Error("API server did not come up in 30s");
}

beforeAll(async () => {
  workdir = mkdtempSync(join(tmpdir(), "chatmart-dash-"));
  const dataDir = join(workdir, "data");
  seedCorpus(dataDir);
  const config = {
    lexicon_path: join(DATA, "lexicon.txt"),
    script_path: join(DATA, "script.json"),
    manifest_path: join(DATA, "manifest.json"),
    data_dir: dataDir,
    host: "127.0.0.1",
    port: PORT,
  };
  const configPath = join(workdir, "config.json");
  writeFileSync(configPath, JSON.stringify(config));
  server = spawn("python3", ["-m", "chatmart.cli", "serve", "--config", configPath], {
    stdio: ["ignore", "pipe", "pipe"],
  });
  await waitForServer();
  manifest = await api.fetchManifest();
}, 60_000);

afterAll(() => {
  server?.kill("SIGTERM");
  if (workdir) rmSync(workdir, { recursive: true, force: true });
});

/** Twenty view states walking the granularity ladder, demographic
 * filters, and response filters over both question kinds. */
const SCRIPTED_STATES: ViewState[] = [
  { question: "allergy_food", granularity: "rolled-up", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergy_food", granularity: "age", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergy_food", granularity: "sex", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergy_food", granularity: "age-then-sex", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergy_food", granularity: "rolled-up", ageFilter: "7", sexFilter: null, responseFilter: null },
  { question: "allergy_food", granularity: "age", ageFilter: null, sexFilter: "F", responseFilter: null },
  { question: "allergy_food", granularity: "age-then-sex", ageFilter: "6", sexFilter: "M", responseFilter: null },
  { question: "allergy_food", granularity: "rolled-up", ageFilter: null, sexFilter: null, responseFilter: "allergic_to_eggs" },
  { question: "allergy_food", granularity: "age", ageFilter: null, sexFilter: null, responseFilter: "allergic_to_seafood" },
  { question: "allergy_food", granularity: "sex", ageFilter: "7", sexFilter: null, responseFilter: "allergic_to_nuts" },
  { question: "allergy_food", granularity: "age-then-sex", ageFilter: null, sexFilter: "F", responseFilter: "allergic_to_dairy" },
  { question: "allergy_felt", granularity: "rolled-up", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergy_felt", granularity: "age", ageFilter: null, sexFilter: null, responseFilter: "felt_rashes" },
  { question: "allergy_intervention", granularity: "sex", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergic_to_animal_fur", granularity: "rolled-up", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergic_to_animal_fur", granularity: "age", ageFilter: null, sexFilter: null, responseFilter: null },
  { question: "allergic_to_animal_fur", granularity: "rolled-up", ageFilter: null, sexFilter: null, responseFilter: "yes" },
  { question: "allergic_to_animal_fur", granularity: "age-then-sex", ageFilter: null, sexFilter: "M", responseFilter: "don't know" },
  { question: "allergic_to_animal_fur", granularity: "sex", ageFilter: "6", sexFilter: null, responseFilter: "no" },
  { question: "allergy_food", granularity: "rolled-up", ageFilter: "unknown", sexFilter: null, responseFilter: null },
];

function expectedCounts(response: QueryResponse): Map<string, number> {
  const expected = new Map<string, number>();
  for (const cell of response.cube.cells) {
    const coords = coordsLabel(cell, response.cube.group_by);
    for (const category of response.cube.categories) {
      expected.set(`${coords}|${category}`, cell.counts[category] ?? 0);
    }
  }
  return expected;
}

function renderedCounts(response: QueryResponse): Map<string, number> {
  const svg = renderChart(response.chart, response.cube);
  const map = new Map<string, number>();
  for (const { category, coords, count } of extractCounts(svg)) {
    const key = `${coords}|${category}`;
    if (map.has(key)) expect(map.get(key)).toBe(count);
    map.set(key, count);
  }
  return map;
}

describe("dashboard differential against the live API", () => {
  it("renders every scripted view state with counts equal to the API response", async () => {
    expect(SCRIPTED_STATES.length).toBe(20);
    for (const state of SCRIPTED_STATES) {
      const plans = planPanels(state, manifest);
      for (const plan of [plans.summary, plans.focus]) {
        const response = await api.runQuery(plan.params);
        const expected = expectedCounts(response);
        const rendered = renderedCounts(response);
        expect(rendered, JSON.stringify(state)).toEqual(expected);
      }
    }
  }, 120_000);

  it("chart kinds follow the granularity rules, pie turns stacked on drill-down", async () => {
    const single: ViewState = {
      question: "allergic_to_animal_fur",
      granularity: "rolled-up",
      ageFilter: null,
      sexFilter: null,
      responseFilter: null,
    };
    const rolled = await api.runQuery(planPanels(single, manifest).summary.params);
    expect(rolled.chart.kind).toBe("pie");

    const drilled = await api.runQuery(
      planPanels({ ...single, granularity: "age" }, manifest).summary.params,
    );
    expect(drilled.chart.kind).toBe("stacked-bar");

    const group: ViewState = { ...single, question: "allergy_food" };
    const groupRolled = await api.runQuery(planPanels(group, manifest).summary.params);
    expect(groupRolled.chart.kind).toBe("bar");
    const groupDrilled = await api.runQuery(
      planPanels({ ...group, granularity: "age-then-sex" }, manifest).summary.params,
    );
    expect(groupDrilled.chart.kind).toBe("stacked-bar");
  }, 60_000);

  it("state decoded from a shared URL issues the same queries", async () => {
    const state = SCRIPTED_STATES[10];
    const restored = decodeState(encodeState(state), manifest);
    expect(restored).toEqual(state);
    const fromState = planPanels(state, manifest).focus.params.toString();
    const fromUrl = planPanels(restored, manifest).focus.params.toString();
    expect(fromUrl).toBe(fromState);
  });
});
