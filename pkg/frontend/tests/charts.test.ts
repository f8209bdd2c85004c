import { describe, expect, it } from 'vitest';

import type { MetricsRow } from '../src/api.js';
import { buildSeries, clientIds, renderLineChart } from '../src/charts.js';

function row(round: number, client: string, loss: number): MetricsRow {
  return {
    round, client_id: client, loss,
    rouge1: loss / 10, rouge2: 0, rougeL: 0, bleu4: 0.5,
    uplink_bytes: 0, downlink_bytes: 0,
  };
}

// Five-round fixture history: one global row per round plus client rows.
const FIXTURE: MetricsRow[] = [
  row(0, 'global', 5.58),
  ...[1, 2, 3, 4, 5].flatMap((r) => [
    row(r, 'global', 5.58 - r * 0.05),
    row(r, '0', 5.6 - r * 0.04),
    row(r, '1', 5.59 - r * 0.045),
  ]),
];

describe('clientIds', () => {
  it('sorts global first then clients', () => {
    expect(clientIds(FIXTURE)).toEqual(['global', '0', '1']);
  });
});

describe('buildSeries', () => {
  it('produces one point per round for the global series', () => {
    const [series] = buildSeries(FIXTURE, 'loss', ['global']);
    expect(series.points).toHaveLength(6);
    expect(series.points.map(([x]) => x)).toEqual([0, 1, 2, 3, 4, 5]);
  });

  it('carries values through unmodified', () => {
    const [series] = buildSeries(FIXTURE, 'loss', ['global']);
    const expected = FIXTURE.filter((r) => r.client_id === 'global').map((r) => r.loss);
    expect(series.points.map(([, y]) => y)).toEqual(expected);
  });

  it('toggling a client changes the series set without touching others', () => {
    const both = buildSeries(FIXTURE, 'loss', ['global', '1']);
    expect(both.map((s) => s.label)).toEqual(['global', '1']);
    const globalOnly = buildSeries(FIXTURE, 'loss', ['global']);
    expect(globalOnly.map((s) => s.label)).toEqual(['global']);
    expect(globalOnly[0].points).toEqual(both[0].points);
  });

  it('selects the requested metric column', () => {
    const [series] = buildSeries(FIXTURE, 'bleu4', ['global']);
    expect(new Set(series.points.map(([, y]) => y))).toEqual(new Set([0.5]));
  });
});

describe('renderLineChart', () => {
  it('embeds exactly the fixture values in the polyline data attribute', () => {
    const series = buildSeries(FIXTURE, 'loss', ['global']);
    const svg = renderLineChart(series, 'loss');
    const match = svg.match(/data-values="([^"]+)"/);
    expect(match).not.toBeNull();
    const plotted = match![1].split(';').map(Number);
    expect(plotted).toEqual(series[0].points.map(([, y]) => y));
  });

  it('renders one x tick per round', () => {
    const svg = renderLineChart(buildSeries(FIXTURE, 'loss', ['global']), 'loss');
    const ticks = [...svg.matchAll(/class="tick">(\d+)</g)].map((m) => m[1]);
    expect(ticks).toEqual(['0', '1', '2', '3', '4', '5']);
  });

  it('renders a placeholder for an empty history', () => {
    const svg = renderLineChart([], 'loss');
    expect(svg).toContain('no history yet');
  });

  it('renders one polyline per selected series', () => {
    const svg = renderLineChart(buildSeries(FIXTURE, 'loss', ['global', '0', '1']), 'loss');
    expect([...svg.matchAll(/<polyline/g)]).toHaveLength(3);
  });
});
