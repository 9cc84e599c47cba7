import { describe, expect, it } from 'vitest';

import { ApiError } from '../src/api.js';
import {
  errorHtml,
  evaluationHtml,
  fmt,
  historyHtml,
  provisioningHtml,
  quadrantSvg,
  rankingsHtml,
  sparklineSvg,
} from '../src/render.js';
import type { EvaluateResponse, OverallRankingsResponse, SweepResponse } from '../src/types.js';
import { loadFixture } from './helpers.js';

const we75 = loadFixture<EvaluateResponse>('evaluate_we75.json');
const nullEval = loadFixture<EvaluateResponse>('evaluate_null.json');
const rankings = loadFixture<OverallRankingsResponse>('rankings_overall.json');
const sweep = loadFixture<SweepResponse>('sweep.json');

describe('evaluationHtml', () => {
  it('matches the recorded snapshot', () => {
    expect(evaluationHtml(we75)).toMatchSnapshot();
  });

  it('shows every headline number exactly as the server sent it', () => {
    const html = evaluationHtml(we75);
    expect(html).toContain(`>${fmt(we75.impact)}<`);
    expect(html).toContain(`>${fmt(we75.impact_raw)}<`);
    expect(html).toContain(`>${fmt(we75.avg_daily_flight_reduction)}<`);
    expect(html).toContain(`>${we75.quadrant}<`);
    expect(html).toContain(`data-policy-id="${we75.policy_id}"`);
    expect(html).toContain(`${fmt(we75.models_used)} models`);
    expect(html).toContain(we75.manifest_hash);
  });

  it('labels the null policy instead of listing reductions', () => {
    const html = evaluationHtml(nullEval);
    expect(html).toContain('no reductions (null policy)');
    expect(html).toContain(`data-policy-id="null"`);
    expect(html).toContain(`>${fmt(nullEval.impact)}<`);
  });

  it('draws one trajectory chart per region in the series', () => {
    const html = evaluationHtml(we75);
    const regions = [...html.matchAll(/data-region="([^"]+)"/g)].map((m) => m[1]);
    expect(regions).toEqual(Object.keys(we75.series));
  });
});

describe('rankingsHtml', () => {
  it('matches the recorded snapshot', () => {
    expect(rankingsHtml(rankings)).toMatchSnapshot();
  });

  it('renders all ten regions in server order with verbatim medians', () => {
    const html = rankingsHtml(rankings);
    const rows = [...html.matchAll(/<tr data-region="([^"]+)"/g)].map((m) => m[1]);
    expect(rows).toEqual(rankings.rankings.map((e) => e.region));
    expect(rows).toHaveLength(10);
    for (const entry of rankings.rankings) {
      expect(html).toContain(`<td class="median">${fmt(entry.median_mu_normalized)}</td>`);
    }
    expect(html).toContain(`data-windows="${rankings.windows.length}"`);
  });
});

describe('quadrantSvg', () => {
  it('matches the recorded snapshot', () => {
    expect(quadrantSvg(sweep)).toMatchSnapshot();
  });

  it('carries the sweep medians verbatim as data attributes', () => {
    const svg = quadrantSvg(sweep);
    expect(svg).toContain(`data-median-reduction="${fmt(sweep.median_reduction)}"`);
    expect(svg).toContain(`data-median-impact="${fmt(sweep.median_impact)}"`);
  });

  it('plots one point per policy plus an optional live point', () => {
    const live = {
      reduction: nullEval.avg_daily_flight_reduction,
      impact: nullEval.impact,
      policyId: nullEval.policy_id,
    };
    const svg = quadrantSvg(sweep, live);
    const policies = [...svg.matchAll(/class="policy /g)];
    expect(policies).toHaveLength(sweep.results.length);
    // the null scenario sits at the origin with its server values untouched
    expect(svg).toContain('data-reduction="0"');
    expect(svg).toContain('data-impact="0"');
    expect(svg).toContain('(current scenario)');
  });
});

describe('historyHtml', () => {
  it('lists evaluations with their sequence numbers', () => {
    const html = historyHtml([
      { sequence: 1, response: nullEval },
      { sequence: 2, response: we75 },
    ]);
    expect(html).toMatchSnapshot();
    expect(html).toContain('data-seq="1"');
    expect(html).toContain('data-seq="2"');
    expect(html).toContain(`impact ${fmt(we75.impact)}`);
  });

  it('shows a placeholder when empty', () => {
    expect(historyHtml([])).toBe('<p class="empty">no evaluations yet</p>');
  });
});

describe('error and provisioning panels', () => {
  it('renders ApiError fields', () => {
    const html = errorHtml(new ApiError(422, 'bad_request', 'days must be positive', 'days'));
    expect(html).toContain('data-code="bad_request"');
    expect(html).toContain('days must be positive');
    expect(html).toContain('(days)');
  });

  it('stringifies unknown errors', () => {
    expect(errorHtml(new Error('kaput'))).toContain('Error: kaput');
  });

  it('renders the provisioning prompt for 409 bodies', () => {
    const fixture = loadFixture<{ status: number; body: { code: string; message: string } }>(
      'rankings_409.json',
    );
    const err = new ApiError(fixture.status, fixture.body.code, fixture.body.message);
    const html = provisioningHtml('The sensitivity ranking', err);
    expect(html).toMatchSnapshot();
    expect(html).toContain('data-code="not_provisioned"');
    expect(html).toContain(fixture.body.message);
  });
});

describe('sparklineSvg', () => {
  it('is empty for no data and centered for a single point', () => {
    expect(sparklineSvg([])).toBe('<svg class="spark"></svg>');
    expect(sparklineSvg([3], 120, 26)).toContain('60,');
  });

  it('escapes nothing and scales into the viewBox', () => {
    const svg = sparklineSvg([0, 1, 2, 1]);
    expect(svg).toContain('viewBox="0 0 120 26"');
    expect([...svg.matchAll(/polyline/g)]).toHaveLength(1);
  });
});
