/**
 * Figure renderer over cptube run directories.
 *
 * Usage: cptube-render --run <dir> --kind <trajectory|coverage|sweep> --out <path>
 *        (sweep reads <dir>/sweep.csv or --run may point straight at the CSV)
 *
 * Exit codes: 0 success, 2 usage or schema error, 1 anything else.
 */

import { readFileSync, statSync, writeFileSync } from "node:fs";
import { join } from "node:path";
import { parseArgs } from "node:util";
import { SchemaError } from "./csv.js";
import { DEFAULT_STYLE, FigureStyle, renderCoverage, renderSweep, renderTrajectory } from "./figures.js";
import { loadRun } from "./schema.js";

const KINDS = ["trajectory", "coverage", "sweep"] as const;

export function render(kind: string, runPath: string, style: FigureStyle = DEFAULT_STYLE): string {
  switch (kind) {
    case "trajectory":
      return renderTrajectory(loadRun(runPath), style);
    case "coverage":
      return renderCoverage(loadRun(runPath), style);
    case "sweep": {
      const csvPath = statSync(runPath).isDirectory() ? join(runPath, "sweep.csv") : runPath;
      return renderSweep(readFileSync(csvPath, "utf8"), style);
    }
    default:
      throw new SchemaError(`unknown figure kind: ${kind} (expected ${KINDS.join("|")})`);
  }
}

export function main(argv: string[]): number {
  let parsed;
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        run: { type: "string" },
        kind: { type: "string" },
        out: { type: "string" },
        width: { type: "string" },
        height: { type: "string" },
        stride: { type: "string" },
      },
    });
  } catch (error) {
    console.error(`usage error: ${(error as Error).message}`);
    return 2;
  }
  const { run, kind, out, width, height, stride } = parsed.values;
  if (!run || !kind || !out) {
    console.error("usage: cptube-render --run <dir> --kind <trajectory|coverage|sweep> --out <path>");
    return 2;
  }
  const style: FigureStyle = {
    width: width ? Number(width) : DEFAULT_STYLE.width,
    height: height ? Number(height) : DEFAULT_STYLE.height,
    tubeStride: stride ? Number(stride) : DEFAULT_STYLE.tubeStride,
  };
  try {
    writeFileSync(out, render(kind, run, style));
    console.log(`wrote ${out}`);
    return 0;
  } catch (error) {
    if (error instanceof SchemaError) {
      console.error(`schema error: ${error.message}`);
      return 2;
    }
    console.error(`error: ${(error as Error).message}`);
    return 1;
  }
}

if (process.argv[1] && process.argv[1].endsWith("cli.js")) {
  process.exit(main(process.argv.slice(2)));
}
