// Measurement charts as SVG strings: histogram bars with the fitted
// Gaussian overlaid, and the compensation sweep with error bars and the
// API-reported argmin marked. Non-converged sweep points render as
// unfilled markers; the argmin always comes from the API, never from a
// client-side recomputation.

import type { HistogramResult, SweepResult } from "./types";

const W = 640;
const H = 360;
const PAD = { left: 56, right: 16, top: 24, bottom: 40 };

function xScale(lo: number, hi: number) {
  return (v: number) => PAD.left + ((v - lo) / (hi - lo)) * (W - PAD.left - PAD.right);
}

function yScale(lo: number, hi: number) {
  return (v: number) => H - PAD.bottom - ((v - lo) / (hi - lo)) * (H - PAD.top - PAD.bottom);
}

export function renderHistogram(result: HistogramResult): string {
  const hist = result.histogram;
  const total = hist.counts.reduce((a, b) => a + b, 0);
  if (total === 0) {
    return `<svg class="chart histogram" viewBox="0 0 ${W} ${H}"><text class="placeholder" x="${W / 2}" y="${H / 2}" text-anchor="middle">no coincidences</text></svg>`;
  }
  const maxCount = Math.max(...hist.counts);
  const sx = xScale(hist.lo_ps, hist.hi_ps);
  const sy = yScale(0, maxCount * 1.05);
  const parts: string[] = [`<svg class="chart histogram" viewBox="0 0 ${W} ${H}" xmlns="http://www.w3.org/2000/svg">`];
  const barW = Math.max((W - PAD.left - PAD.right) / hist.counts.length, 1);
  hist.counts.forEach((count, i) => {
    if (count === 0) return;
    const x = sx(hist.lo_ps + i * hist.bin_width_ps);
    parts.push(
      `<rect class="bar" x="${x.toFixed(1)}" y="${sy(count).toFixed(1)}" ` +
        `width="${barW.toFixed(2)}" height="${(sy(0) - sy(count)).toFixed(1)}"/>`,
    );
  });
  if (result.fit && result.fit.converged) {
    const fit = result.fit;
    const steps = 200;
    const pts: string[] = [];
    for (let i = 0; i <= steps; i++) {
      const t = hist.lo_ps + ((hist.hi_ps - hist.lo_ps) * i) / steps;
      const v =
        fit.amplitude * Math.exp(-((t - fit.center_ps) ** 2) / (2 * fit.sigma_ps ** 2)) +
        fit.baseline;
      pts.push(`${sx(t).toFixed(1)},${sy(v).toFixed(1)}`);
    }
    parts.push(`<polyline class="fit-curve" points="${pts.join(" ")}" fill="none"/>`);
    parts.push(
      `<text class="fwhm-label" x="${W - PAD.right}" y="${PAD.top}" text-anchor="end">` +
        `FWHM ${fit.fwhm_ps.toFixed(1)} ± ${fit.fwhm_uncertainty_ps.toFixed(1)} ps</text>`,
    );
  } else if (result.fit_error) {
    parts.push(
      `<text class="fit-error" x="${W - PAD.right}" y="${PAD.top}" text-anchor="end">fit failed: ${result.fit_error}</text>`,
    );
  }
  parts.push(
    `<text class="axis-label" x="${W / 2}" y="${H - 8}" text-anchor="middle">time difference (ps)</text>`,
    "</svg>",
  );
  return parts.join("\n");
}

export interface SweepPointView {
  x: number;
  y: number | null;
  err: number | null;
  converged: boolean;
  isArgmin: boolean;
}

export function sweepPointViews(result: SweepResult): SweepPointView[] {
  return result.points.map((p) => ({
    x: p.compensation_ps_nm,
    y: p.fwhm_ps,
    err: p.fwhm_err_ps,
    converged: p.converged,
    isArgmin:
      result.argmin_compensation_ps_nm !== null &&
      p.compensation_ps_nm === result.argmin_compensation_ps_nm &&
      p.converged,
  }));
}

export function renderSweep(result: SweepResult): string {
  const points = sweepPointViews(result);
  const usable = points.filter((p) => p.y !== null) as (SweepPointView & { y: number })[];
  if (usable.length === 0) {
    return `<svg class="chart sweep" viewBox="0 0 ${W} ${H}"><text class="placeholder" x="${W / 2}" y="${H / 2}" text-anchor="middle">no converged fits</text></svg>`;
  }
  const xs = points.map((p) => p.x);
  const lo = Math.min(...xs);
  const hi = Math.max(...xs);
  const yMax = Math.max(...usable.map((p) => p.y + (p.err ?? 0)));
  const yMin = Math.min(...usable.map((p) => p.y - (p.err ?? 0)));
  const sx = xScale(lo - 0.5, hi + 0.5);
  const sy = yScale(Math.max(yMin - 10, 0), yMax + 10);
  const parts: string[] = [`<svg class="chart sweep" viewBox="0 0 ${W} ${H}" xmlns="http://www.w3.org/2000/svg">`];
  const line = usable
    .slice()
    .sort((a, b) => a.x - b.x)
    .map((p) => `${sx(p.x).toFixed(1)},${sy(p.y).toFixed(1)}`)
    .join(" ");
  parts.push(`<polyline class="sweep-line" points="${line}" fill="none"/>`);
  for (const p of points) {
    if (p.y === null) {
      // non-converged: unfilled marker pinned to the axis, excluded from the curve
      parts.push(
        `<circle class="point non-converged" data-x="${p.x}" cx="${sx(p.x).toFixed(1)}" ` +
          `cy="${(H - PAD.bottom).toFixed(1)}" r="4" fill="none"/>`,
      );
      continue;
    }
    if (p.err !== null) {
      parts.push(
        `<line class="error-bar" x1="${sx(p.x).toFixed(1)}" y1="${sy(p.y - p.err).toFixed(1)}" ` +
          `x2="${sx(p.x).toFixed(1)}" y2="${sy(p.y + p.err).toFixed(1)}"/>`,
      );
    }
    const cls = p.isArgmin ? "point argmin" : "point";
    parts.push(
      `<circle class="${cls}" data-x="${p.x}" cx="${sx(p.x).toFixed(1)}" cy="${sy(p.y).toFixed(1)}" r="${p.isArgmin ? 6 : 3.5}"/>`,
    );
    if (p.isArgmin) {
      parts.push(
        `<text class="argmin-label" x="${sx(p.x).toFixed(1)}" y="${(sy(p.y) - 12).toFixed(1)}" ` +
          `text-anchor="middle">argmin ${p.x} ps/nm</text>`,
      );
    }
  }
  parts.push(
    `<text class="axis-label" x="${W / 2}" y="${H - 8}" text-anchor="middle">compensation (ps/nm)</text>`,
    `<text class="axis-label" x="14" y="${H / 2}" transform="rotate(-90 14 ${H / 2})" text-anchor="middle">FWHM (ps)</text>`,
    "</svg>",
  );
  return parts.join("\n");
}
