// Pure HTML/SVG string builders. Every number shown to the user is the
// server's JSON value passed through fmt() unchanged; the only arithmetic
// here maps values onto pixels.

import { ApiError } from './api.js';
import type {
  EvaluateResponse,
  OverallRankingsResponse,
  RegionSeries,
  SweepResponse,
} from './types.js';

export interface HistoryEntryLike {
  sequence: number;
  response: EvaluateResponse;
}

export function fmt(value: number): string {
  return String(value);
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

function px(value: number): string {
  return String(Math.round(value * 100) / 100);
}

function scale(value: number, lo: number, hi: number, outLo: number, outHi: number): number {
  if (hi <= lo) return (outLo + outHi) / 2;
  return outLo + ((value - lo) / (hi - lo)) * (outHi - outLo);
}

// ---------------------------------------------------------------------------
// Sparkline and trajectory charts

export function sparklineSvg(values: number[], width = 120, height = 26): string {
  if (values.length === 0) return '<svg class="spark"></svg>';
  const lo = Math.min(...values);
  const hi = Math.max(...values);
  const pts = values
    .map((v, i) => {
      const x = values.length === 1 ? width / 2 : scale(i, 0, values.length - 1, 2, width - 2);
      const y = scale(v, lo, hi, height - 3, 3);
      return `${px(x)},${px(y)}`;
    })
    .join(' ');
  return (
    `<svg class="spark" viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    `<polyline points="${pts}" fill="none" /></svg>`
  );
}

export function seriesChartSvg(region: string, series: RegionSeries, width = 220, height = 90): string {
  const all = series.unperturbed.concat(series.perturbed);
  const lo = Math.min(...all);
  const hi = Math.max(...all);
  const line = (values: number[], cls: string) => {
    const pts = values
      .map((v, i) => {
        const x = values.length === 1 ? width / 2 : scale(i, 0, values.length - 1, 4, width - 4);
        const y = scale(v, lo, hi, height - 6, 6);
        return `${px(x)},${px(y)}`;
      })
      .join(' ');
    return `<polyline class="${cls}" points="${pts}" fill="none" />`;
  };
  return (
    `<figure class="trajectory" data-region="${escapeHtml(region)}">` +
    `<figcaption>${escapeHtml(region)}</figcaption>` +
    `<svg viewBox="0 0 ${width} ${height}" width="${width}" height="${height}">` +
    line(series.unperturbed, 'unperturbed') +
    line(series.perturbed, 'perturbed') +
    `</svg></figure>`
  );
}

// ---------------------------------------------------------------------------
// Evaluation result panel

export function evaluationHtml(resp: EvaluateResponse): string {
  const reductions = Object.entries(resp.reductions)
    .filter(([, r]) => r > 0)
    .map(([name, r]) => `${escapeHtml(name)}=${fmt(r)}`)
    .join(', ');
  const charts = Object.entries(resp.series)
    .map(([region, series]) => seriesChartSvg(region, series))
    .join('');
  return (
    `<div class="evaluation" data-policy-id="${escapeHtml(resp.policy_id)}">` +
    `<dl class="headline">` +
    `<div><dt>policy</dt><dd class="policy-id">${escapeHtml(resp.policy_id)}</dd></div>` +
    `<div><dt>impact (normalized)</dt><dd class="impact">${fmt(resp.impact)}</dd></div>` +
    `<div><dt>impact (cases)</dt><dd class="impact-raw">${fmt(resp.impact_raw)}</dd></div>` +
    `<div><dt>avg daily flight reduction</dt><dd class="flight-reduction">${fmt(resp.avg_daily_flight_reduction)}</dd></div>` +
    `<div><dt>quadrant</dt><dd class="quadrant badge-${escapeHtml(resp.quadrant.toLowerCase())}">${escapeHtml(resp.quadrant)}</dd></div>` +
    `<div><dt>window</dt><dd>${escapeHtml(resp.window_start)} &middot; ${fmt(resp.days)} days</dd></div>` +
    `<div><dt>ensemble</dt><dd class="models-used">${fmt(resp.models_used)} models</dd></div>` +
    `</dl>` +
    (reductions ? `<p class="reductions">reductions: ${reductions}</p>` : '<p class="reductions">no reductions (null policy)</p>') +
    `<div class="charts">${charts}</div>` +
    `<p class="manifest">manifest ${escapeHtml(resp.manifest_hash)}</p>` +
    `</div>`
  );
}

// ---------------------------------------------------------------------------
// Rankings panel

export function rankingsHtml(resp: OverallRankingsResponse): string {
  const rows = resp.rankings
    .map(
      (entry, i) =>
        `<tr data-region="${escapeHtml(entry.region)}">` +
        `<td class="pos">${i + 1}</td>` +
        `<td class="region">${escapeHtml(entry.region)} <span class="code">${escapeHtml(entry.code)}</span></td>` +
        `<td class="median">${fmt(entry.median_mu_normalized)}</td>` +
        `<td class="spark-cell">${sparklineSvg(entry.mu_normalized)}</td>` +
        `</tr>`,
    )
    .join('');
  return (
    `<table class="rankings" data-windows="${resp.windows.length}">` +
    `<thead><tr><th></th><th>region</th><th>median &mu; (normalized)</th>` +
    `<th>&mu; across ${resp.windows.length} windows</th></tr></thead>` +
    `<tbody>${rows}</tbody></table>` +
    `<p class="manifest">manifest ${escapeHtml(resp.manifest_hash)}</p>`
  );
}

export function provisioningHtml(what: string, err: ApiError): string {
  return (
    `<div class="prompt" data-code="${escapeHtml(err.code)}">` +
    `<p>${escapeHtml(what)} has not been provisioned on this run yet.</p>` +
    `<p class="detail">${escapeHtml(err.message)}</p>` +
    `</div>`
  );
}

export function errorHtml(error: unknown): string {
  if (error instanceof ApiError) {
    const field = error.field ? ` <span class="field">(${escapeHtml(error.field)})</span>` : '';
    return (
      `<div class="error" data-code="${escapeHtml(error.code)}">` +
      `<strong>${escapeHtml(error.code)}</strong>: ${escapeHtml(error.message)}${field}` +
      `</div>`
    );
  }
  return `<div class="error"><strong>error</strong>: ${escapeHtml(String(error))}</div>`;
}

// ---------------------------------------------------------------------------
// Quadrant view

export interface LivePoint {
  reduction: number;
  impact: number;
  policyId: string;
}

const QW = 380;
const QH = 300;
const QM = { left: 46, right: 14, top: 14, bottom: 34 };

export function quadrantSvg(sweep: SweepResponse, live: LivePoint | null = null): string {
  const reductions = sweep.results.map((r) => r.avg_daily_flight_reduction);
  const impacts = sweep.results.map((r) => r.impact);
  if (live !== null) {
    reductions.push(live.reduction);
    impacts.push(live.impact);
  }
  const xMax = Math.max(...reductions, sweep.median_reduction) * 1.06 || 1;
  const yMax = Math.max(...impacts, sweep.median_impact, 1) * 1.06;
  const sx = (v: number) => scale(v, 0, xMax, QM.left, QW - QM.right);
  const sy = (v: number) => scale(v, 0, yMax, QH - QM.bottom, QM.top);

  const mx = sx(sweep.median_reduction);
  const my = sy(sweep.median_impact);
  const points = sweep.results
    .map(
      (r) =>
        `<circle class="policy ${r.quadrant.toLowerCase()}" cx="${px(sx(r.avg_daily_flight_reduction))}" ` +
        `cy="${px(sy(r.impact))}" r="4" data-policy-id="${escapeHtml(r.policy_id)}">` +
        `<title>${escapeHtml(r.policy_id)}: reduction ${fmt(r.avg_daily_flight_reduction)}, impact ${fmt(r.impact)}</title>` +
        `</circle>`,
    )
    .join('');
  const livePoint =
    live === null
      ? ''
      : `<circle class="live" cx="${px(sx(live.reduction))}" cy="${px(sy(live.impact))}" r="6" ` +
        `data-reduction="${fmt(live.reduction)}" data-impact="${fmt(live.impact)}">` +
        `<title>${escapeHtml(live.policyId)} (current scenario)</title></circle>`;

  return (
    `<svg class="quadrant" viewBox="0 0 ${QW} ${QH}" width="${QW}" height="${QH}" ` +
    `data-median-reduction="${fmt(sweep.median_reduction)}" data-median-impact="${fmt(sweep.median_impact)}">` +
    `<rect class="plot" x="${QM.left}" y="${QM.top}" width="${QW - QM.left - QM.right}" height="${QH - QM.top - QM.bottom}" />` +
    `<line class="median" x1="${px(mx)}" y1="${QM.top}" x2="${px(mx)}" y2="${QH - QM.bottom}" />` +
    `<line class="median" x1="${QM.left}" y1="${px(my)}" x2="${QW - QM.right}" y2="${px(my)}" />` +
    `<text class="qlabel" x="${QM.left + 6}" y="${QM.top + 14}">Q2</text>` +
    `<text class="qlabel" x="${QW - QM.right - 24}" y="${QM.top + 14}">Q1</text>` +
    `<text class="qlabel" x="${QM.left + 6}" y="${QH - QM.bottom - 6}">Q3</text>` +
    `<text class="qlabel" x="${QW - QM.right - 24}" y="${QH - QM.bottom - 6}">Q4</text>` +
    `<text class="axis x" x="${(QM.left + QW - QM.right) / 2}" y="${QH - 8}">avg daily flight reduction</text>` +
    `<text class="axis y" transform="rotate(-90 12 ${QH / 2})" x="12" y="${QH / 2}">impact (normalized)</text>` +
    points +
    livePoint +
    `</svg>`
  );
}

// ---------------------------------------------------------------------------
// History

export function historyHtml(entries: readonly HistoryEntryLike[]): string {
  if (entries.length === 0) return '<p class="empty">no evaluations yet</p>';
  const items = entries
    .map(
      (e) =>
        `<li data-seq="${e.sequence}">` +
        `<span class="policy-id">${escapeHtml(e.response.policy_id)}</span> ` +
        `impact ${fmt(e.response.impact)} &middot; ${escapeHtml(e.response.quadrant)}` +
        `</li>`,
    )
    .join('');
  return `<ol class="history">${items}</ol>`;
}
