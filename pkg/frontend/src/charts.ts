/** Line charts for the training history, rendered as plain SVG strings.
 * Point values are carried through from the API rows unmodified. */

import type { MetricsRow } from './api.js';

export const METRICS = ['loss', 'rouge1', 'rouge2', 'rougeL', 'bleu4'] as const;
export type MetricName = (typeof METRICS)[number];

export interface Series {
  label: string;
  points: Array<[number, number]>; // [round, value]
}

const PALETTE = ['#2563eb', '#dc2626', '#059669', '#d97706', '#7c3aed', '#0891b2'];

export function clientIds(rows: MetricsRow[]): string[] {
  const ids = new Set<string>();
  for (const row of rows) ids.add(row.client_id);
  return [...ids].sort((a, b) => (a === 'global' ? -1 : b === 'global' ? 1 : a.localeCompare(b)));
}

export function buildSeries(
  rows: MetricsRow[],
  metric: MetricName,
  selected: string[],
): Series[] {
  return selected.map((clientId) => ({
    label: clientId,
    points: rows
      .filter((r) => r.client_id === clientId)
      .sort((a, b) => a.round - b.round)
      .map((r) => [r.round, r[metric]] as [number, number]),
  }));
}

function scale(value: number, lo: number, hi: number, outLo: number, outHi: number): number {
  if (hi === lo) return (outLo + outHi) / 2;
  return outLo + ((value - lo) / (hi - lo)) * (outHi - outLo);
}

export function renderLineChart(
  series: Series[],
  title: string,
  width = 360,
  height = 200,
): string {
  const pad = 34;
  const points = series.flatMap((s) => s.points);
  if (points.length === 0) {
    return `<svg class="chart" role="img" aria-label="${escapeAttr(title)}" width="${width}" height="${height}"><text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="placeholder">no history yet</text></svg>`;
  }
  const xs = points.map((p) => p[0]);
  const ys = points.map((p) => p[1]);
  const [xLo, xHi] = [Math.min(...xs), Math.max(...xs)];
  const [yLo, yHi] = [Math.min(...ys), Math.max(...ys)];
  const parts: string[] = [];
  parts.push(`<svg class="chart" role="img" aria-label="${escapeAttr(title)}" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`);
  parts.push(`<text x="${width / 2}" y="14" text-anchor="middle" class="chart-title">${escapeHtml(title)}</text>`);
  parts.push(`<line x1="${pad}" y1="${height - pad}" x2="${width - 8}" y2="${height - pad}" class="axis"/>`);
  parts.push(`<line x1="${pad}" y1="${height - pad}" x2="${pad}" y2="18" class="axis"/>`);
  parts.push(`<text x="${pad - 4}" y="${height - pad}" text-anchor="end" class="tick">${formatTick(yLo)}</text>`);
  parts.push(`<text x="${pad - 4}" y="26" text-anchor="end" class="tick">${formatTick(yHi)}</text>`);
  series.forEach((s, i) => {
    if (s.points.length === 0) return;
    const color = PALETTE[i % PALETTE.length];
    const coords = s.points
      .map(([x, y]) => {
        const px = scale(x, xLo, xHi, pad, width - 12);
        const py = scale(y, yLo, yHi, height - pad, 20);
        return `${px.toFixed(1)},${py.toFixed(1)}`;
      })
      .join(' ');
    parts.push(`<polyline fill="none" stroke="${color}" stroke-width="2" points="${coords}" data-series="${escapeAttr(s.label)}" data-values="${s.points.map(([, y]) => y).join(';')}"/>`);
    s.points.forEach(([x, y]) => {
      const px = scale(x, xLo, xHi, pad, width - 12);
      const py = scale(y, yLo, yHi, height - pad, 20);
      parts.push(`<circle cx="${px.toFixed(1)}" cy="${py.toFixed(1)}" r="2.5" fill="${color}"><title>${escapeHtml(s.label)} round ${x}: ${y}</title></circle>`);
    });
  });
  for (const x of [...new Set(xs)].sort((a, b) => a - b)) {
    const px = scale(x, xLo, xHi, pad, width - 12);
    parts.push(`<text x="${px.toFixed(1)}" y="${height - pad + 14}" text-anchor="middle" class="tick">${x}</text>`);
  }
  parts.push('</svg>');
  return parts.join('');
}

function formatTick(v: number): string {
  if (Number.isInteger(v)) return String(v);
  return v.toPrecision(3);
}

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;');
}

export function escapeAttr(text: string): string {
  return escapeHtml(text).replace(/"/g, '&quot;');
}
