#!/usr/bin/env node
/** fluxplot plot <figure-spec.json>: render one SVG figure from CLI CSVs. */

import * as fs from "fs";
import * as path from "path";

import { SchemaError, parseCsv } from "./csv";
import { SpecError, parseFigureSpec } from "./spec";
import { renderConvergence, renderNormTrace, renderStabilityMap } from "./render";

export function renderFigure(specPath: string): string {
  const spec = parseFigureSpec(specPath);
  const csvs = spec.inputs.map(parseCsv);
  let svg: string;
  if (spec.kind === "convergence") {
    svg = renderConvergence(spec, csvs);
  } else if (spec.kind === "stability_map") {
    svg = renderStabilityMap(spec, csvs[0]);
  } else {
    svg = renderNormTrace(spec, csvs[0]);
  }
  fs.mkdirSync(path.dirname(spec.output), { recursive: true });
  fs.writeFileSync(spec.output, svg + "\n");
  return spec.output;
}

export function main(argv: string[]): number {
  if (argv.length !== 2 || argv[0] !== "plot") {
    process.stderr.write("usage: fluxplot plot <figure-spec.json>\n");
    return 2;
  }
  try {
    const out = renderFigure(argv[1]);
    process.stdout.write(`wrote ${out}\n`);
    return 0;
  } catch (e) {
    if (e instanceof SpecError || e instanceof SchemaError) {
      process.stderr.write(`error: ${(e as Error).message}\n`);
      return 2;
    }
    process.stderr.write(`error: ${(e as Error).message}\n`);
    return 1;
  }
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
