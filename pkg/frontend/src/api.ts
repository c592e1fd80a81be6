/** Typed client for the analytics API. The dashboard never computes
 * aggregates itself: every number it shows comes out of one of these
 * responses. */

export interface Provenance {
  snapshot_id: string | null;
  built_at: string | null;
  loaded_at: number | null;
  sessions?: number;
  stale: boolean;
}

export interface CubeCell {
  coords: Record<string, string | number>;
  counts: Record<string, number>;
  total: number;
}

export interface Cube {
  target: string;
  kind: "single" | "group";
  group_by: string[];
  categories: string[];
  cells: CubeCell[];
  provenance: Provenance;
}

export interface ChartSpec {
  kind: "pie" | "bar" | "stacked-bar";
  title: string;
  categories: string[];
  series: string[];
}

export interface QueryResponse {
  query: { target: string; group_by: string[]; filters: string[][] };
  cube: Cube;
  chart: ChartSpec;
  provenance: Provenance;
}

export interface QuestionMember {
  value: string;
  column: string;
  display: string;
}

export interface QuestionInfo {
  name: string;
  kind: "single" | "group";
  display: string;
  members?: QuestionMember[];
}

export interface ManifestInfo {
  questions: QuestionInfo[];
  demographics: Record<string, string[]>;
  response_categories: string[];
  provenance: Provenance;
}

export class ApiError extends Error {
  constructor(message: string, readonly status: number) {
    super(message);
  }
}

async function getJson<T>(url: string): Promise<T> {
  const response = await fetch(url);
  if (!response.ok) {
    let detail = response.statusText;
    try {
      const body = await response.json();
      if (body && body.detail) detail = String(body.detail);
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(detail, response.status);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(private readonly base: string = "") {}

  fetchManifest(): Promise<ManifestInfo> {
    return getJson<ManifestInfo>(`${this.base}/manifest`);
  }

  runQuery(params: URLSearchParams): Promise<QueryResponse> {
    return getJson<QueryResponse>(`${this.base}/olap/query?${params.toString()}`);
  }
}
