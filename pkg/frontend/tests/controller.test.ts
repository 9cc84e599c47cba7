import { describe, expect, it, vi } from 'vitest';

import type { ApiClient } from '../src/api.js';
import { ExplorerController, parseDays } from '../src/controller.js';
import type { ControllerHooks } from '../src/controller.js';
import { ScenarioState } from '../src/state.js';
import type { EvaluateRequest, EvaluateResponse } from '../src/types.js';
import { loadFixture, tick } from './helpers.js';

const CODES = ['NA', 'SA', 'OC', 'AF', 'ME', 'EE', 'WE', 'CA', 'SAS', 'SEA'];
const WE75 = loadFixture<EvaluateResponse>('evaluate_we75.json');

function harness(responses: EvaluateResponse[] = [WE75]) {
  const queue = [...responses];
  const evaluate = vi.fn((req: EvaluateRequest) => {
    void req;
    const next = queue.shift();
    return next ? Promise.resolve(next) : Promise.reject(new Error('queue empty'));
  });
  const hooks = {
    onResult: vi.fn(),
    onError: vi.fn(),
    onManifestChange: vi.fn(),
  } satisfies ControllerHooks;
  const state = new ScenarioState(CODES);
  const api = { evaluate } as unknown as ApiClient;
  const controller = new ExplorerController(api, state, hooks);
  return { controller, state, hooks, evaluate };
}

describe('parseDays', () => {
  it('accepts positive integers only', () => {
    expect(parseDays('30')).toBe(30);
    expect(parseDays('1')).toBe(1);
    expect(parseDays('0')).toBeNull();
    expect(parseDays('-3')).toBeNull();
    expect(parseDays('2.5')).toBeNull();
    expect(parseDays('soon')).toBeNull();
    expect(parseDays('')).toBeNull();
  });
});

describe('ExplorerController', () => {
  it('never sends a request for invalid slider input', async () => {
    const { controller, state, evaluate } = harness();
    state.windowStart = WE75.window_start;
    for (const raw of ['garbage', '150', '-5', '', '  ']) {
      expect(controller.sliderInput('WE', raw)).toBe(false);
    }
    expect(controller.sliderInput('XX', '50')).toBe(false);
    await tick();
    expect(evaluate).not.toHaveBeenCalled();
    expect(state.isNull()).toBe(true);
  });

  it('does not evaluate until a window is picked', async () => {
    const { controller, state, evaluate } = harness();
    expect(controller.sliderInput('WE', '75')).toBe(false);
    await tick();
    expect(evaluate).not.toHaveBeenCalled();
    // the fraction itself was accepted; only the request was withheld
    expect(state.fraction('WE')).toBe(0.75);
  });

  it('sends exactly one request for a valid slider change', async () => {
    const { controller, state, hooks, evaluate } = harness();
    state.windowStart = WE75.window_start;
    state.days = WE75.days;
    expect(controller.sliderInput('WE', '75')).toBe(true);
    await tick();
    expect(evaluate).toHaveBeenCalledTimes(1);
    expect(evaluate).toHaveBeenCalledWith({
      reductions: { WE: 0.75 },
      window_start: WE75.window_start,
      days: WE75.days,
    });
    expect(hooks.onResult).toHaveBeenCalledWith(WE75, 1);
    expect(state.history()).toHaveLength(1);
    expect(state.lastEvaluation).toBe(WE75);
  });

  it('evaluates presets and the cleared (null) scenario', async () => {
    const { controller, evaluate } = harness([WE75, WE75]);
    controller.setWindow(WE75.window_start);
    await tick();
    expect(controller.preset('NA', 0.5)).toBe(true);
    await tick();
    expect(controller.clearScenario()).toBe(true);
    await tick();
    const bodies = evaluate.mock.calls.map(([req]) => req.reductions);
    expect(bodies).toContainEqual({ NA: 0.5 });
    expect(bodies[bodies.length - 1]).toEqual({});
  });

  it('rejects bad day counts without a request', async () => {
    const { controller, state, evaluate } = harness();
    state.windowStart = WE75.window_start;
    expect(controller.setDays('soon')).toBe(false);
    expect(controller.setDays('0')).toBe(false);
    await tick();
    expect(evaluate).not.toHaveBeenCalled();
    expect(controller.setDays('10')).toBe(true);
    await tick();
    expect(evaluate).toHaveBeenCalledTimes(1);
    expect(state.days).toBe(10);
  });

  it('routes evaluation failures to the error hook', async () => {
    const { controller, state, hooks } = harness([]);
    state.windowStart = WE75.window_start;
    expect(controller.requestEvaluation()).toBe(true);
    await tick();
    expect(hooks.onError).toHaveBeenCalledTimes(1);
    expect(hooks.onResult).not.toHaveBeenCalled();
    expect(state.history()).toHaveLength(0);
  });

  it('announces a manifest change between evaluations', async () => {
    const other = { ...WE75, manifest_hash: 'different-hash' };
    const { controller, state, hooks } = harness([WE75, other]);
    state.windowStart = WE75.window_start;
    controller.requestEvaluation();
    await tick();
    controller.requestEvaluation();
    await tick();
    expect(hooks.onManifestChange).toHaveBeenCalledTimes(1);
    expect(hooks.onManifestChange).toHaveBeenCalledWith(WE75.manifest_hash, 'different-hash');
  });
});
