import type { ApiClient } from './api.js';
import { EvaluationChannel } from './channel.js';
import { parseSliderPercent, ScenarioState } from './state.js';
import type { EvaluateRequest, EvaluateResponse } from './types.js';

export function parseDays(raw: string): number | null {
  if (raw.trim() === '') return null;
  const days = Number(raw);
  if (!Number.isInteger(days) || days < 1) return null;
  return days;
}

export interface ControllerHooks {
  onResult(resp: EvaluateResponse, seq: number): void;
  onError(error: unknown, seq: number): void;
  onManifestChange?(previous: string, current: string): void;
}

// Glue between the scenario state and the evaluation channel. Input
// validation lives here so that a bad slider value, an unknown region, or a
// missing window can never turn into an HTTP request.
export class ExplorerController {
  readonly channel: EvaluationChannel<EvaluateRequest, EvaluateResponse>;
  private manifestHash: string | null = null;

  constructor(
    api: ApiClient,
    readonly state: ScenarioState,
    private readonly hooks: ControllerHooks,
  ) {
    this.channel = new EvaluationChannel(
      (req) => api.evaluate(req),
      (res, req, seq) => {
        this.trackManifest(res.manifest_hash);
        this.state.record(seq, req, res);
        this.hooks.onResult(res, seq);
      },
      (error, _req, seq) => this.hooks.onError(error, seq),
    );
  }

  sliderInput(code: string, raw: string): boolean {
    const fraction = parseSliderPercent(raw);
    if (fraction === null) return false;
    if (!this.state.setFraction(code, fraction)) return false;
    return this.requestEvaluation();
  }

  preset(code: string, level: number): boolean {
    if (!this.state.applyPreset(code, level)) return false;
    return this.requestEvaluation();
  }

  clearScenario(): boolean {
    this.state.clear();
    return this.requestEvaluation();
  }

  setWindow(windowStart: string): boolean {
    if (windowStart.trim() === '') return false;
    this.state.windowStart = windowStart.trim();
    return this.requestEvaluation();
  }

  setDays(raw: string): boolean {
    const days = parseDays(raw);
    if (days === null) return false;
    this.state.days = days;
    return this.requestEvaluation();
  }

  requestEvaluation(): boolean {
    const req = this.state.evaluationRequest();
    if (req === null) return false;
    this.channel.submit(req);
    return true;
  }

  private trackManifest(hash: string): void {
    if (this.manifestHash === null) {
      this.manifestHash = hash;
      return;
    }
    if (hash !== this.manifestHash) {
      const previous = this.manifestHash;
      this.manifestHash = hash;
      this.hooks.onManifestChange?.(previous, hash);
    }
  }
}
