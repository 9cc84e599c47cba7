import type { EvaluateRequest, EvaluateResponse } from './types.js';

export const SLIDER_STEP = 0.05;
export const PRESET_LEVELS = [0.25, 0.5, 0.75] as const;

// Snap a fraction to the 5% slider grid, or null when it is not a usable
// number. Rounding back to two decimals keeps the grid values exact
// (0.35, not 0.35000000000000003).
export function snapFraction(value: number): number | null {
  if (typeof value !== 'number' || !Number.isFinite(value)) return null;
  if (value < 0 || value > 1) return null;
  return Math.round(Math.round(value / SLIDER_STEP) * SLIDER_STEP * 100) / 100;
}

// Raw slider/text input arrives as a percent string; anything that does not
// parse to a number in [0, 100] is rejected outright.
export function parseSliderPercent(raw: string): number | null {
  if (raw.trim() === '') return null;
  const percent = Number(raw);
  if (!Number.isFinite(percent) || percent < 0 || percent > 100) return null;
  return snapFraction(percent / 100);
}

export interface HistoryEntry {
  sequence: number;
  request: EvaluateRequest;
  response: EvaluateResponse;
}

export class ScenarioState {
  private readonly fractions = new Map<string, number>();
  private readonly evaluations: HistoryEntry[] = [];
  windowStart: string | null = null;
  days = 30;
  lastEvaluation: EvaluateResponse | null = null;

  constructor(readonly codes: readonly string[]) {
    for (const code of codes) this.fractions.set(code, 0);
  }

  fraction(code: string): number {
    return this.fractions.get(code) ?? 0;
  }

  // Returns false (and leaves the state untouched) for unknown regions or
  // values outside [0, 1]; accepted values are snapped to the 5% grid.
  setFraction(code: string, value: number): boolean {
    if (!this.fractions.has(code)) return false;
    const snapped = snapFraction(value);
    if (snapped === null) return false;
    this.fractions.set(code, snapped);
    return true;
  }

  applyPreset(code: string, level: number): boolean {
    return this.setFraction(code, level);
  }

  clear(): void {
    for (const code of this.codes) this.fractions.set(code, 0);
  }

  isNull(): boolean {
    for (const value of this.fractions.values()) {
      if (value !== 0) return false;
    }
    return true;
  }

  // Nonzero reductions keyed by region code, in canonical region order.
  reductions(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const code of this.codes) {
      const value = this.fractions.get(code) ?? 0;
      if (value > 0) out[code] = value;
    }
    return out;
  }

  evaluationRequest(): EvaluateRequest | null {
    if (this.windowStart === null) return null;
    return { reductions: this.reductions(), window_start: this.windowStart, days: this.days };
  }

  // History is append-only for the session: entries are recorded here and
  // there is no removal path.
  record(sequence: number, request: EvaluateRequest, response: EvaluateResponse): HistoryEntry {
    const entry: HistoryEntry = { sequence, request, response };
    this.evaluations.push(entry);
    this.lastEvaluation = response;
    return entry;
  }

  history(): readonly HistoryEntry[] {
    return this.evaluations.slice();
  }
}
