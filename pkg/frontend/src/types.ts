// Shapes of the /v1 API payloads the explorer consumes. Field names mirror
// the JSON exactly; the UI never reshapes or recomputes server numbers.

export interface RegionInfo {
  name: string;
  code: string;
}

export interface RegionsResponse {
  manifest_hash: string;
  regions: RegionInfo[];
  latest: {
    date: string;
    raw_cases: Record<string, number>;
    raw_flights: number[][];
  };
}

export interface OverallRankingEntry {
  region: string;
  code: string;
  median_mu_normalized: number;
  mu: number[];
  mu_normalized: number[];
  rank: number[];
}

export interface OverallRankingsResponse {
  manifest_hash: string;
  horizon: number;
  ensemble_size: number;
  windows: string[];
  rankings: OverallRankingEntry[];
}

export interface WindowRankingRecord {
  region: string;
  code: string;
  mu: number;
  mu_normalized: number;
  rank: number;
}

export interface WindowRankingsResponse {
  manifest_hash: string;
  window_start: string;
  horizon: number;
  ensemble_size: number;
  records: WindowRankingRecord[];
}

export interface EvaluateRequest {
  reductions: Record<string, number>;
  window_start: string;
  days: number;
  models?: number;
}

export interface RegionSeries {
  unperturbed: number[];
  perturbed: number[];
}

export interface EvaluateResponse {
  manifest_hash: string;
  policy_id: string;
  reductions: Record<string, number>;
  window_start: string;
  days: number;
  models_used: number;
  impact: number;
  impact_raw: number;
  avg_daily_flight_reduction: number;
  quadrant: string;
  series: Record<string, RegionSeries>;
}

export interface SweepPolicy {
  policy_id: string;
  reductions: Record<string, number>;
  impact_raw: number;
  avg_daily_flight_reduction: number;
  impact: number;
  quadrant: string;
}

export interface SweepResponse {
  manifest_hash: string;
  median_reduction: number;
  median_impact: number;
  max_impact_raw: number;
  horizon: number;
  ensemble_size: number;
  levels: number[];
  node_set: string[];
  window_starts: string[];
  results: SweepPolicy[];
}

export interface ApiErrorBody {
  code: string;
  message: string;
  field: string | null;
}
