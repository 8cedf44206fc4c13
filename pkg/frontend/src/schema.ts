/** Run-directory schema shared with the simulation package. */

import { readFileSync } from "node:fs";
import { join } from "node:path";
import { SchemaError, parseCsv, toNumber } from "./csv.js";

export const TRAJECTORY_COLUMNS = [
  "episode", "t", "r_x", "r_y", "r_z", "v_x", "v_y", "v_z", "roll", "pitch",
  "u_p", "u_q", "u_T", "theta_norm", "d_true_norm", "wind_x", "wind_y", "wind_z",
] as const;

export const CONFORMAL_COLUMNS = [
  "episode", "k", "k_local", "j", "score", "q_active", "d_bar", "case",
  "feasible", "fallback", "tube_pos_max", "sup_d_true", "covered_point", "covered_score",
] as const;

export const SWEEP_NUMERIC_COLUMNS = ["alpha", "coverage_score", "coverage_pointwise"] as const;

export interface TrajectoryRow {
  episode: number;
  t: number;
  x: number;
  y: number;
  z: number;
  dTrueNorm: number;
}

export interface ConformalRow {
  episode: number;
  k: number;
  kLocal: number;
  dBar: number;
  theCase: string;
  tubePosMax: number;
  coveredPoint: number; // 1, 0 or NaN
}

export interface Obstacle {
  center: [number, number, number];
  radius: number;
}

export interface ScenarioInfo {
  start: [number, number, number];
  goal: [number, number, number];
  goal_radius: number;
  vehicle_radius: number;
  altitude_min: number;
  altitude_max: number;
  obstacles: Obstacle[];
}

export interface RunData {
  trajectory: TrajectoryRow[];
  conformal: ConformalRow[];
  metrics: Record<string, unknown>;
  scenario: ScenarioInfo;
  stepDt: number;
}

function requireVector3(value: unknown, name: string): [number, number, number] {
  if (!Array.isArray(value) || value.length !== 3 || value.some((v) => typeof v !== "number")) {
    throw new SchemaError(`scenario field ${name} must be a 3-vector`);
  }
  return value as [number, number, number];
}

export function loadScenario(text: string): ScenarioInfo {
  const raw = JSON.parse(text) as Record<string, unknown>;
  for (const field of [
    "start", "goal", "goal_radius", "vehicle_radius", "altitude_min", "altitude_max", "obstacles",
  ]) {
    if (!(field in raw)) {
      throw new SchemaError(`missing scenario field: ${field}`);
    }
  }
  const obstacles = (raw.obstacles as unknown[]).map((entry, idx) => {
    const o = entry as Record<string, unknown>;
    if (typeof o.radius !== "number") {
      throw new SchemaError(`obstacle ${idx} has no numeric radius`);
    }
    return { center: requireVector3(o.center, `obstacles[${idx}].center`), radius: o.radius };
  });
  return {
    start: requireVector3(raw.start, "start"),
    goal: requireVector3(raw.goal, "goal"),
    goal_radius: raw.goal_radius as number,
    vehicle_radius: raw.vehicle_radius as number,
    altitude_min: raw.altitude_min as number,
    altitude_max: raw.altitude_max as number,
    obstacles,
  };
}

export function parseTrajectory(text: string): TrajectoryRow[] {
  return parseCsv(text, TRAJECTORY_COLUMNS).map((row) => ({
    episode: toNumber(row.episode as string, "episode"),
    t: toNumber(row.t as string, "t"),
    x: toNumber(row.r_x as string, "r_x"),
    y: toNumber(row.r_y as string, "r_y"),
    z: toNumber(row.r_z as string, "r_z"),
    dTrueNorm: toNumber(row.d_true_norm as string, "d_true_norm"),
  }));
}

export function parseConformal(text: string): ConformalRow[] {
  return parseCsv(text, CONFORMAL_COLUMNS).map((row) => ({
    episode: toNumber(row.episode as string, "episode"),
    k: toNumber(row.k as string, "k"),
    kLocal: toNumber(row.k_local as string, "k_local"),
    dBar: toNumber(row.d_bar as string, "d_bar"),
    theCase: row.case as string,
    tubePosMax: toNumber(row.tube_pos_max as string, "tube_pos_max"),
    coveredPoint: toNumber(row.covered_point as string, "covered_point"),
  }));
}

export function loadRun(dir: string): RunData {
  const trajectory = parseTrajectory(readFileSync(join(dir, "trajectory.csv"), "utf8"));
  const conformal = parseConformal(readFileSync(join(dir, "conformal.csv"), "utf8"));
  const metrics = JSON.parse(readFileSync(join(dir, "metrics.json"), "utf8")) as Record<string, unknown>;
  const scenario = loadScenario(readFileSync(join(dir, "scenario.json"), "utf8"));
  if (trajectory.length === 0 || conformal.length === 0) {
    throw new SchemaError("run directory holds empty logs");
  }
  const perEpisode = trajectory.filter((r) => r.episode === 0).length;
  const steps = conformal.filter((r) => r.episode === 0).length;
  if (perEpisode % steps !== 0) {
    throw new SchemaError(
      `trajectory rows (${perEpisode}) are not a multiple of controller steps (${steps})`,
    );
  }
  const first = trajectory[0] as TrajectoryRow;
  return { trajectory, conformal, metrics, scenario, stepDt: first.t * (perEpisode / steps) };
}

/** Fraction of evaluated windows whose margin covered the realized disturbance. */
export function pointwiseCoverage(conformal: ConformalRow[]): number {
  const flags = conformal.filter((row) => !Number.isNaN(row.coveredPoint));
  if (flags.length === 0) {
    throw new SchemaError("no evaluated coverage windows in conformal.csv");
  }
  const covered = flags.filter((row) => row.coveredPoint === 1).length;
  return covered / flags.length;
}
