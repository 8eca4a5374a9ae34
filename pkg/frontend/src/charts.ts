/** Pure SVG line-chart rendering: points in, markup string out. */

import { axisTick } from "./format.js";
import type { Point } from "./series.js";

export interface ChartOptions {
  width?: number;
  height?: number;
  pad?: number;
  title?: string;
}

export function lineChartSvg(points: Point[], options: ChartOptions = {}): string {
  const width = options.width ?? 420;
  const height = options.height ?? 220;
  const pad = options.pad ?? 40;
  const title = options.title ?? "";
  if (points.length === 0) {
    return (
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}">` +
      `<text x="${width / 2}" y="${height / 2}" text-anchor="middle" class="chart-empty">` +
      `no events yet</text></svg>`
    );
  }
  const xs = points.map((p) => p.step);
  const ys = points.map((p) => p.value);
  const xMin = Math.min(...xs);
  const xMax = Math.max(...xs);
  const yMin = Math.min(...ys);
  const yMax = Math.max(...ys);
  const xSpan = xMax - xMin || 1;
  const ySpan = yMax - yMin || 1;
  const sx = (x: number) => pad + ((x - xMin) / xSpan) * (width - 2 * pad);
  const sy = (y: number) => height - pad - ((y - yMin) / ySpan) * (height - 2 * pad);
  const path = points
    .map((p, i) => `${i === 0 ? "M" : "L"}${sx(p.step).toFixed(2)},${sy(p.value).toFixed(2)}`)
    .join(" ");
  const markers = points
    .map((p) => `<circle cx="${sx(p.step).toFixed(2)}" cy="${sy(p.value).toFixed(2)}" r="2.5"/>`)
    .join("");
  return (
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" class="chart">` +
    `<text x="${width / 2}" y="16" text-anchor="middle" class="chart-title">${title}</text>` +
    `<line x1="${pad}" y1="${height - pad}" x2="${width - pad}" y2="${height - pad}" class="axis"/>` +
    `<line x1="${pad}" y1="${pad}" x2="${pad}" y2="${height - pad}" class="axis"/>` +
    `<text x="${pad}" y="${height - pad + 16}" class="tick">${axisTick(xMin)}</text>` +
    `<text x="${width - pad}" y="${height - pad + 16}" text-anchor="end" class="tick">${axisTick(xMax)}</text>` +
    `<text x="${pad - 4}" y="${height - pad}" text-anchor="end" class="tick">${axisTick(yMin)}</text>` +
    `<text x="${pad - 4}" y="${pad + 4}" text-anchor="end" class="tick">${axisTick(yMax)}</text>` +
    `<path d="${path}" class="series"/>` +
    `<g class="markers">${markers}</g>` +
    `</svg>`
  );
}

/** Horizontal bars for the green panel's per-stage energy. Bar lengths are
 * proportional rendering only; the printed numbers are the server values. */
export function energyBarsSvg(
  stages: Record<string, number>,
  width = 420,
  rowHeight = 26,
): string {
  const names = Object.keys(stages);
  if (names.length === 0) {
    return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${rowHeight}"></svg>`;
  }
  const max = Math.max(...names.map((n) => stages[n]), 0) || 1;
  const labelW = 110;
  const rows = names
    .map((name, i) => {
      const w = ((stages[name] / max) * (width - labelW - 150)).toFixed(2);
      const y = i * rowHeight;
      return (
        `<text x="0" y="${y + 17}" class="bar-label">${name}</text>` +
        `<rect x="${labelW}" y="${y + 4}" width="${w}" height="${rowHeight - 10}" class="bar"/>` +
        `<text x="${labelW + Number(w) + 6}" y="${y + 17}" class="bar-value">${String(stages[name])} kWh</text>`
      );
    })
    .join("");
  const height = names.length * rowHeight;
  return `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" class="bars">${rows}</svg>`;
}
