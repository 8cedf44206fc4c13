/** Figure renderers over run logs: trajectory, coverage, sweep summaries. */

import { SchemaError, parseCsv, toNumber } from "./csv.js";
import { RunData, pointwiseCoverage } from "./schema.js";
import { circle, fmt, line, makeMapper, polyline, svgDocument, tag, text } from "./svg.js";

export interface FigureStyle {
  width: number;
  height: number;
  tubeStride: number; // draw a tube cross-section every this many controller steps
}

export const DEFAULT_STYLE: FigureStyle = { width: 720, height: 480, tubeStride: 10 };

/**
 * Top-down view: flown x-y path, obstacle circles, goal region, and tube
 * cross-sections (the governing plan's worst position-tube radius) at fixed
 * step intervals.
 */
export function renderTrajectory(run: RunData, style: FigureStyle = DEFAULT_STYLE): string {
  const path = run.trajectory.filter((row) => row.episode === 0);
  const steps = run.conformal.filter((row) => row.episode === 0);
  const xs = path.map((r) => r.x);
  const ys = path.map((r) => r.y);
  for (const obstacle of run.scenario.obstacles) {
    xs.push(obstacle.center[0] + obstacle.radius, obstacle.center[0] - obstacle.radius);
    ys.push(obstacle.center[1] + obstacle.radius, obstacle.center[1] - obstacle.radius);
  }
  xs.push(run.scenario.start[0], run.scenario.goal[0]);
  ys.push(run.scenario.start[1] - 1, run.scenario.goal[1] + 1);
  const map = makeMapper(
    [Math.min(...xs), Math.max(...xs)],
    [Math.min(...ys), Math.max(...ys)],
    style.width,
    style.height,
    36,
  );

  const children: string[] = [];
  const innerPerStep = path.length / steps.length;
  for (const step of steps) {
    if (step.kLocal % style.tubeStride !== 0 || Number.isNaN(step.tubePosMax)) continue;
    const at = path[Math.min(step.kLocal * innerPerStep, path.length - 1)];
    if (!at) continue;
    children.push(
      circle(map.x(at.x), map.y(at.y), map.scale(step.tubePosMax + run.scenario.vehicle_radius), {
        fill: "#74b9ff",
        "fill-opacity": "0.25",
        stroke: "#0984e3",
        "stroke-width": 1,
      }),
    );
  }
  for (const obstacle of run.scenario.obstacles) {
    children.push(
      circle(map.x(obstacle.center[0]), map.y(obstacle.center[1]), map.scale(obstacle.radius), {
        fill: "#b2bec3",
        stroke: "#2d3436",
        "stroke-width": 1.5,
      }),
    );
  }
  children.push(
    circle(map.x(run.scenario.goal[0]), map.y(run.scenario.goal[1]), map.scale(run.scenario.goal_radius), {
      fill: "none",
      stroke: "#00b894",
      "stroke-width": 2,
      "stroke-dasharray": "6 3",
    }),
  );
  children.push(
    polyline(
      path.map((r) => [map.x(r.x), map.y(r.y)]),
      { stroke: "#d63031", "stroke-width": 2 },
    ),
  );
  children.push(
    circle(map.x(run.scenario.start[0]), map.y(run.scenario.start[1]), 4, { fill: "#2d3436" }),
  );
  children.push(text(12, 20, "top-down trajectory with margin tubes", { "font-size": 14 }));
  return svgDocument(style.width, style.height, children);
}

export function coverageAnnotation(run: RunData): string {
  return `pointwise coverage: ${(100 * pointwiseCoverage(run.conformal)).toFixed(2)}%`;
}

/**
 * Realized disturbance norm against the calibrated margin step function,
 * annotated with the empirical pointwise coverage recomputed from the log.
 */
export function renderCoverage(run: RunData, style: FigureStyle = DEFAULT_STYLE): string {
  const episodes = Math.max(...run.trajectory.map((r) => r.episode)) + 1;
  const perEpisode = run.trajectory.filter((r) => r.episode === 0).length;
  const episodeSpan = (run.trajectory[perEpisode - 1] as { t: number }).t;

  const seriesD: Array<[number, number]> = run.trajectory.map((row, idx) => [
    row.episode * episodeSpan + row.t,
    row.dTrueNorm,
  ]);
  const stepsPerEpisode = run.conformal.filter((r) => r.episode === 0).length;
  const stepDt = episodeSpan / stepsPerEpisode;
  const seriesMargin: Array<[number, number]> = [];
  for (const row of run.conformal) {
    const t0 = row.episode * episodeSpan + row.kLocal * stepDt;
    seriesMargin.push([t0, row.dBar], [t0 + stepDt, row.dBar]);
  }

  const tMax = episodes * episodeSpan;
  const vMax = Math.max(...seriesD.map(([, v]) => v), ...seriesMargin.map(([, v]) => v)) * 1.1;
  const map = makeMapper([0, tMax], [0, vMax], style.width, style.height, 40);

  const children: string[] = [];
  children.push(line(map.x(0), map.y(0), map.x(tMax), map.y(0), { stroke: "#2d3436", "stroke-width": 1 }));
  children.push(line(map.x(0), map.y(0), map.x(0), map.y(vMax), { stroke: "#2d3436", "stroke-width": 1 }));
  children.push(polyline(seriesD.map(([t, v]) => [map.x(t), map.y(v)]), { stroke: "#636e72", "stroke-width": 1 }));
  children.push(
    polyline(seriesMargin.map(([t, v]) => [map.x(t), map.y(v)]), { stroke: "#d63031", "stroke-width": 2 }),
  );
  children.push(text(map.x(tMax) - 40, map.y(0) + 24, "t [s]", { "font-size": 12 }));
  children.push(text(10, 18, "true disturbance vs calibrated margin", { "font-size": 14 }));
  children.push(text(10, 36, coverageAnnotation(run), { "font-size": 13, fill: "#d63031" }));
  return svgDocument(style.width, style.height, children);
}

/** Mean score coverage per target-rate cell from an aggregated sweep CSV. */
export function renderSweep(sweepCsv: string, style: FigureStyle = DEFAULT_STYLE): string {
  const lines = sweepCsv.split(/\r?\n/).filter((l) => l.length > 0);
  const header = (lines[0] as string).split(",");
  for (const column of ["alpha", "coverage_score", "status"]) {
    if (!header.includes(column)) {
      throw new SchemaError(`missing column: ${column}`);
    }
  }
  const rows = lines.slice(1).map((lineText) => {
    const cells = lineText.split(",");
    const row: Record<string, string> = {};
    header.forEach((column, idx) => (row[column] = cells[idx] ?? ""));
    return row;
  });
  const byAlpha = new Map<number, number[]>();
  for (const row of rows) {
    if (row.status !== "ok" || row.alpha === "") continue;
    const alpha = toNumber(row.alpha as string, "alpha");
    const coverage = toNumber(row.coverage_score as string, "coverage_score");
    if (!byAlpha.has(alpha)) byAlpha.set(alpha, []);
    (byAlpha.get(alpha) as number[]).push(coverage);
  }
  if (byAlpha.size === 0) {
    throw new SchemaError("sweep CSV holds no successful cells with an alpha value");
  }
  const cells = [...byAlpha.entries()]
    .map(([alpha, values]) => ({ alpha, mean: values.reduce((a, b) => a + b, 0) / values.length }))
    .sort((a, b) => a.alpha - b.alpha);

  const alphas = cells.map((c) => c.alpha);
  const map = makeMapper(
    [Math.min(...alphas) - 0.02, Math.max(...alphas) + 0.02],
    [0.5, 1.0],
    style.width,
    style.height,
    48,
  );
  const children: string[] = [];
  children.push(
    polyline(cells.map((c) => [map.x(c.alpha), map.y(1 - c.alpha)]), {
      stroke: "#b2bec3",
      "stroke-width": 1,
      "stroke-dasharray": "4 3",
    }),
  );
  children.push(
    polyline(cells.map((c) => [map.x(c.alpha), map.y(c.mean)]), { stroke: "#0984e3", "stroke-width": 2 }),
  );
  for (const cell of cells) {
    children.push(circle(map.x(cell.alpha), map.y(cell.mean), 4, { fill: "#0984e3" }));
    children.push(
      text(map.x(cell.alpha) - 14, map.y(cell.mean) - 10, `${fmt(cell.alpha)}:${cell.mean.toFixed(3)}`, {
        "font-size": 11,
      }),
    );
  }
  children.push(text(10, 18, "score coverage vs target error rate (dashed: 1 - alpha)", { "font-size": 14 }));
  return svgDocument(style.width, style.height, children);
}
