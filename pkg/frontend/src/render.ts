/**
 * The three figure kinds, each a pure function from parsed CSV data to an
 * SVG string.  Numbers pass through untouched: the slope annotation reprints
 * the CSV's final slope_running, and cell colors are derived from norm_T as
 * stored.  A header-only CSV yields empty axes plus a warning annotation.
 */

import * as path from "path";

import { Csv, columnIndex, flagCell, numberCell, requireColumns } from "./csv";
import { FigureSpec } from "./spec";
import { Scale, Svg, formatTick, linearScale, logScale } from "./svg";

const W = 640;
const H = 440;
const MARGIN = { left: 72, right: 24, top: 40, bottom: 56 };
const STABILITY_TOL = 1e-10;

const SERIES_COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b"];

interface Frame {
  x0: number;
  x1: number;
  y0: number;
  y1: number;
}

function frame(): Frame {
  return { x0: MARGIN.left, x1: W - MARGIN.right, y0: H - MARGIN.bottom, y1: MARGIN.top };
}

function drawAxes(svg: Svg, f: Frame, spec: FigureSpec, xs: Scale | null, ys: Scale | null): void {
  svg.line(f.x0, f.y0, f.x1, f.y0, "#222");
  svg.line(f.x0, f.y0, f.x0, f.y1, "#222");
  if (spec.title) {
    svg.text((f.x0 + f.x1) / 2, MARGIN.top - 16, spec.title, { size: 14, anchor: "middle" });
  }
  svg.text((f.x0 + f.x1) / 2, H - 14, spec.xLabel, { anchor: "middle" });
  svg.text(18, (f.y0 + f.y1) / 2, spec.yLabel, { anchor: "middle", rotate: -90 });
  if (xs) {
    for (const t of xs.ticks) {
      const x = xs(t);
      svg.line(x, f.y0, x, f.y0 + 4, "#222");
      svg.text(x, f.y0 + 18, xs.label(t), { size: 10, anchor: "middle" });
    }
  }
  if (ys) {
    for (const t of ys.ticks) {
      const y = ys(t);
      svg.line(f.x0 - 4, y, f.x0, y, "#222");
      svg.text(f.x0 - 7, y + 3, ys.label(t), { size: 10, anchor: "end" });
    }
  }
}

function emptyFigure(spec: FigureSpec, which: string): string {
  const svg = new Svg(W, H);
  const f = frame();
  drawAxes(svg, f, spec, null, null);
  svg.text((f.x0 + f.x1) / 2, (f.y0 + f.y1) / 2,
    `warning: no data rows in ${path.basename(which)}`,
    { anchor: "middle", fill: "#b00" });
  return svg.render();
}

// -- convergence: log-log error vs h or tau with the fitted slope annotated --

export function renderConvergence(spec: FigureSpec, csvs: Csv[]): string {
  for (const csv of csvs) {
    requireColumns(csv, ["level", "h_or_tau", "error", "slope_running"]);
  }
  const nonEmpty = csvs.filter((c) => c.rows.length > 0);
  if (nonEmpty.length === 0) {
    return emptyFigure(spec, csvs[0].path);
  }

  const series = nonEmpty.map((csv) => {
    const xi = columnIndex(csv, "h_or_tau");
    const yi = columnIndex(csv, "error");
    const si = columnIndex(csv, "slope_running");
    const pts: Array<[number, number]> = [];
    for (let r = 0; r < csv.rows.length; r++) {
      pts.push([numberCell(csv, r, xi), numberCell(csv, r, yi)]);
    }
    const finalSlopeRaw = csv.rows[csv.rows.length - 1][si];
    return { csv, pts, finalSlopeRaw };
  });

  const xsAll = series.flatMap((s) => s.pts.map((p) => p[0]));
  const ysAll = series.flatMap((s) => s.pts.map((p) => p[1]));
  const f = frame();
  const xs = logScale(Math.min(...xsAll), Math.max(...xsAll), f.x0 + 12, f.x1 - 12);
  const ys = logScale(Math.min(...ysAll), Math.max(...ysAll), f.y0 - 12, f.y1 + 12);

  const svg = new Svg(W, H);
  drawAxes(svg, f, spec, xs, ys);
  series.forEach((s, i) => {
    const color = SERIES_COLORS[i % SERIES_COLORS.length];
    const pixels = s.pts.map(([x, y]) => [xs(x), ys(y)] as [number, number]);
    svg.polyline(pixels, color);
    for (const [px, py] of pixels) {
      svg.circle(px, py, 3, color);
    }
    const slope = Number(s.finalSlopeRaw);
    const label = Number.isFinite(slope)
      ? `slope ≈ ${formatSlope(s.finalSlopeRaw)}`
      : "slope undefined";
    const name = series.length > 1 ? `${path.basename(path.dirname(s.csv.path))}: ` : "";
    svg.text(f.x0 + 12, f.y1 + 16 + 16 * i, name + label, { fill: color });
  });
  return svg.render();
}

/** Reprint the CSV's final slope_running to two decimals, without recomputing. */
export function formatSlope(raw: string): string {
  return Number(raw).toFixed(2);
}

// -- stability map over (sigma, tau), unit-norm contour marked ---------------

interface StabilityCell {
  sigma: number;
  tau: number;
  norm: number;
  bSpd: boolean;
}

function cellColor(cell: StabilityCell): string {
  if (!cell.bSpd || Number.isNaN(cell.norm)) {
    return "#bbbbbb";
  }
  if (cell.norm <= 1 + STABILITY_TOL) {
    // stable: deeper blue for stronger contraction
    const depth = Math.min(1, Math.max(0, 1 - cell.norm));
    const ch = Math.round(225 - 120 * depth);
    return `rgb(${ch - 60},${ch},255)`;
  }
  // unstable: deeper red for larger amplification
  const depth = Math.min(1, Math.log10(cell.norm) / 4);
  const ch = Math.round(210 - 140 * depth);
  return `rgb(255,${ch},${ch})`;
}

export function renderStabilityMap(spec: FigureSpec, csv: Csv): string {
  requireColumns(csv, ["sigma", "tau", "norm_T", "B_spd"]);
  if (csv.rows.length === 0) {
    return emptyFigure(spec, csv.path);
  }
  const si = columnIndex(csv, "sigma");
  const ti = columnIndex(csv, "tau");
  const ni = columnIndex(csv, "norm_T");
  const bi = columnIndex(csv, "B_spd");
  const cells: StabilityCell[] = [];
  for (let r = 0; r < csv.rows.length; r++) {
    cells.push({
      sigma: numberCell(csv, r, si),
      tau: numberCell(csv, r, ti),
      norm: numberCell(csv, r, ni),
      bSpd: flagCell(csv, r, bi) === true,
    });
  }
  const sigmas = [...new Set(cells.map((c) => c.sigma))].sort((a, b) => a - b);
  const taus = [...new Set(cells.map((c) => c.tau))].sort((a, b) => a - b);
  const byKey = new Map(cells.map((c) => [`${c.sigma}|${c.tau}`, c]));

  const f = frame();
  const cw = (f.x1 - f.x0) / taus.length;
  const chh = (f.y0 - f.y1) / sigmas.length;
  const svg = new Svg(W, H);
  drawAxes(svg, f, spec, null, null);

  const stableAt = (is: number, it: number): boolean | null => {
    const c = byKey.get(`${sigmas[is]}|${taus[it]}`);
    if (!c) return null;
    if (!c.bSpd || Number.isNaN(c.norm)) return false;
    return c.norm <= 1 + STABILITY_TOL;
  };

  for (let is = 0; is < sigmas.length; is++) {
    for (let it = 0; it < taus.length; it++) {
      const c = byKey.get(`${sigmas[is]}|${taus[it]}`);
      const x = f.x0 + it * cw;
      const y = f.y0 - (is + 1) * chh;
      if (!c) continue;
      svg.rect(x, y, cw, chh, cellColor(c), ' stroke="#fff" stroke-width="0.5"');
      const label = !c.bSpd || Number.isNaN(c.norm) ? "B not SPD" : formatTick(c.norm);
      svg.text(x + cw / 2, y + chh / 2 + 3, label, { size: 9, anchor: "middle" });
    }
  }

  // ||T|| = 1 contour: heavy segments on edges between stable and unstable
  for (let is = 0; is < sigmas.length; is++) {
    for (let it = 0; it < taus.length; it++) {
      const here = stableAt(is, it);
      if (here === null) continue;
      const x = f.x0 + it * cw;
      const y = f.y0 - (is + 1) * chh;
      const right = it + 1 < taus.length ? stableAt(is, it + 1) : null;
      if (right !== null && right !== here) {
        svg.line(x + cw, y, x + cw, y + chh, "#000", 3);
      }
      const up = is + 1 < sigmas.length ? stableAt(is + 1, it) : null;
      if (up !== null && up !== here) {
        svg.line(x, y, x + cw, y, "#000", 3);
      }
    }
  }

  for (let it = 0; it < taus.length; it++) {
    svg.text(f.x0 + (it + 0.5) * cw, f.y0 + 18, formatTick(taus[it]), { size: 10, anchor: "middle" });
  }
  for (let is = 0; is < sigmas.length; is++) {
    svg.text(f.x0 - 7, f.y0 - (is + 0.5) * chh + 3, formatTick(sigmas[is]), { size: 10, anchor: "end" });
  }
  svg.text(f.x1, f.y1 - 6, "bold boundary: ||T|| = 1 contour", { size: 10, anchor: "end", fill: "#444" });
  return svg.render();
}

// -- per-step norm trace ------------------------------------------------------

export function renderNormTrace(spec: FigureSpec, csv: Csv): string {
  requireColumns(csv, ["n", "t", "norm", "rhs_norm", "estimate_satisfied"]);
  if (csv.rows.length === 0) {
    return emptyFigure(spec, csv.path);
  }
  const ti = columnIndex(csv, "t");
  const ni = columnIndex(csv, "norm");
  const ei = columnIndex(csv, "estimate_satisfied");
  const pts: Array<{ t: number; norm: number; flag: boolean | null }> = [];
  for (let r = 0; r < csv.rows.length; r++) {
    pts.push({
      t: numberCell(csv, r, ti),
      norm: numberCell(csv, r, ni),
      flag: flagCell(csv, r, ei),
    });
  }
  const finite = pts.filter((p) => Number.isFinite(p.norm));
  const svg = new Svg(W, H);
  const f = frame();
  if (finite.length === 0) {
    drawAxes(svg, f, spec, null, null);
    svg.text((f.x0 + f.x1) / 2, (f.y0 + f.y1) / 2,
      `warning: no finite norms in ${path.basename(csv.path)}`,
      { anchor: "middle", fill: "#b00" });
    return svg.render();
  }

  const tMin = Math.min(...pts.map((p) => p.t));
  const tMax = Math.max(...pts.map((p) => p.t));
  const nMin = Math.min(...finite.map((p) => p.norm));
  const nMax = Math.max(...finite.map((p) => p.norm));
  const useLog = nMin > 0 && nMax / nMin > 50;
  const xs = linearScale(tMin, tMax, f.x0 + 6, f.x1 - 6);
  const ys = useLog
    ? logScale(nMin, nMax, f.y0 - 8, f.y1 + 8)
    : linearScale(Math.min(0, nMin), nMax, f.y0 - 8, f.y1 + 8);

  drawAxes(svg, f, spec, xs, ys);
  svg.polyline(finite.map((p) => [xs(p.t), ys(p.norm)] as [number, number]), SERIES_COLORS[0]);

  let violations = 0;
  let undef = 0;
  for (const p of pts) {
    if (p.flag === false) {
      violations++;
      if (Number.isFinite(p.norm)) svg.circle(xs(p.t), ys(p.norm), 4, "#d62728");
    } else if (p.flag === null) {
      undef++;
      if (Number.isFinite(p.norm)) svg.circle(xs(p.t), ys(p.norm), 4, "#999");
    }
  }
  const notes: string[] = [];
  if (violations) notes.push(`${violations} estimate violation(s) marked red`);
  if (undef) notes.push(`${undef} step(s) with undefined estimate marked gray`);
  if (notes.length === 0) notes.push("estimate satisfied at every step");
  svg.text(f.x0 + 12, f.y1 + 16, notes.join("; "), { size: 11, fill: "#444" });
  return svg.render();
}
