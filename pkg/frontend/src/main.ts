import { ApiClient, ApiError } from './api.js';
import { ExplorerController } from './controller.js';
import {
  errorHtml,
  evaluationHtml,
  historyHtml,
  provisioningHtml,
  quadrantSvg,
  rankingsHtml,
} from './render.js';
import { PRESET_LEVELS, ScenarioState } from './state.js';
import type { EvaluateResponse, SweepResponse } from './types.js';

const BASE_URL_KEY = 'aerograph.base-url';
const DEFAULT_BASE_URL = 'http://127.0.0.1:8000';

function el(id: string): HTMLElement {
  const node = document.getElementById(id);
  if (node === null) throw new Error(`missing #${id}`);
  return node;
}

function setStatus(text: string): void {
  el('status').textContent = text;
}

async function boot(): Promise<void> {
  const baseInput = el('base-url') as HTMLInputElement;
  baseInput.value = localStorage.getItem(BASE_URL_KEY) ?? DEFAULT_BASE_URL;
  const api = new ApiClient(baseInput.value);

  el('apply-base').addEventListener('click', () => {
    localStorage.setItem(BASE_URL_KEY, baseInput.value);
    api.setBaseUrl(baseInput.value);
    void loadPanels();
  });

  let regions: { name: string; code: string }[];
  try {
    const res = await api.regions();
    regions = res.regions;
    setStatus(`connected to ${api.baseUrl} (manifest ${res.manifest_hash.slice(0, 12)})`);
  } catch (err) {
    setStatus('backend unreachable; set the base URL and apply');
    el('result').innerHTML = errorHtml(err);
    return;
  }

  const state = new ScenarioState(regions.map((r) => r.code));
  let sweepData: SweepResponse | null = null;

  const refreshQuadrant = (live: EvaluateResponse | null) => {
    if (sweepData === null) return;
    el('quadrant').innerHTML = quadrantSvg(
      sweepData,
      live === null
        ? null
        : {
            reduction: live.avg_daily_flight_reduction,
            impact: live.impact,
            policyId: live.policy_id,
          },
    );
  };

  const controller = new ExplorerController(api, state, {
    onResult: (resp) => {
      el('result').innerHTML = evaluationHtml(resp);
      el('history').innerHTML = historyHtml(state.history());
      refreshQuadrant(resp);
      setStatus(`evaluated ${resp.policy_id} with ${resp.models_used} models`);
    },
    onError: (error) => {
      el('result').innerHTML = errorHtml(error);
      setStatus('evaluation failed');
    },
    onManifestChange: (previous, current) => {
      setStatus(
        `manifest changed (${previous.slice(0, 12)} -> ${current.slice(0, 12)}); ` +
          'earlier history entries belong to the old run',
      );
    },
  });

  // scenario panel: one slider row per region
  const sliders = el('sliders');
  sliders.innerHTML = '';
  for (const region of regions) {
    const row = document.createElement('div');
    row.className = 'slider-row';
    const label = document.createElement('label');
    label.textContent = region.name;
    label.title = region.code;
    const input = document.createElement('input');
    input.type = 'range';
    input.min = '0';
    input.max = '100';
    input.step = '5';
    input.value = '0';
    const value = document.createElement('span');
    value.className = 'value';
    value.textContent = '0%';
    input.addEventListener('input', () => {
      if (controller.sliderInput(region.code, input.value)) {
        value.textContent = `${Math.round(state.fraction(region.code) * 100)}%`;
      }
    });
    row.append(label, input, value);
    for (const level of PRESET_LEVELS) {
      const btn = document.createElement('button');
      btn.textContent = `${level * 100}%`;
      btn.addEventListener('click', () => {
        if (controller.preset(region.code, level)) {
          input.value = String(level * 100);
          value.textContent = `${level * 100}%`;
        }
      });
      row.append(btn);
    }
    sliders.append(row);
  }

  const windowInput = el('window-start') as HTMLInputElement;
  windowInput.addEventListener('change', () => controller.setWindow(windowInput.value));
  const daysInput = el('days') as HTMLInputElement;
  daysInput.value = String(state.days);
  daysInput.addEventListener('change', () => controller.setDays(daysInput.value));
  el('evaluate').addEventListener('click', () => {
    if (!controller.requestEvaluation()) setStatus('pick a forecast window first');
  });
  el('clear').addEventListener('click', () => {
    controller.clearScenario();
    sliders.querySelectorAll('input[type=range]').forEach((node) => {
      (node as HTMLInputElement).value = '0';
    });
    sliders.querySelectorAll('span.value').forEach((node) => {
      node.textContent = '0%';
    });
  });

  async function loadPanels(): Promise<void> {
    try {
      const rankings = await api.rankings();
      el('rankings').innerHTML = rankingsHtml(rankings);
      const datalist = el('windows') as HTMLDataListElement;
      datalist.innerHTML = rankings.windows
        .map((w) => `<option value="${w}"></option>`)
        .join('');
      if (state.windowStart === null && rankings.windows.length > 0) {
        state.windowStart = rankings.windows[rankings.windows.length - 1];
        windowInput.value = state.windowStart;
      }
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        el('rankings').innerHTML = provisioningHtml('The sensitivity ranking', err);
      } else {
        el('rankings').innerHTML = errorHtml(err);
      }
    }
    try {
      sweepData = await api.sweep();
      refreshQuadrant(state.lastEvaluation);
    } catch (err) {
      if (err instanceof ApiError && err.status === 409) {
        el('quadrant').innerHTML = provisioningHtml('The policy sweep', err);
      } else {
        el('quadrant').innerHTML = errorHtml(err);
      }
    }
  }

  await loadPanels();
}

void boot();
