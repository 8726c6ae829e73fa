/** Figure specification: input CSV path(s), figure kind, labels, output path. */

import * as fs from "fs";
import * as path from "path";

export const FIGURE_KINDS = ["convergence", "stability_map", "norm_trace"] as const;
export type FigureKind = (typeof FIGURE_KINDS)[number];

export interface FigureSpec {
  kind: FigureKind;
  inputs: string[];
  output: string;
  title: string;
  xLabel: string;
  yLabel: string;
}

export class SpecError extends Error {}

const DEFAULT_LABELS: Record<FigureKind, [string, string]> = {
  convergence: ["h or tau", "error"],
  stability_map: ["tau", "sigma"],
  norm_trace: ["t", "norm"],
};

export function parseFigureSpec(specPath: string): FigureSpec {
  let raw: string;
  try {
    raw = fs.readFileSync(specPath, "utf8");
  } catch (e) {
    throw new SpecError(`cannot read figure spec ${specPath}: ${(e as Error).message}`);
  }
  let doc: unknown;
  try {
    doc = JSON.parse(raw);
  } catch (e) {
    throw new SpecError(`invalid JSON in ${specPath}: ${(e as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new SpecError(`${specPath}: figure spec must be a JSON object`);
  }
  const d = doc as Record<string, unknown>;

  const kind = d.kind;
  if (typeof kind !== "string" || !(FIGURE_KINDS as readonly string[]).includes(kind)) {
    throw new SpecError(
      `${specPath}: "kind" must be one of ${FIGURE_KINDS.join(", ")}, got ${JSON.stringify(kind)}`,
    );
  }

  let inputs: string[];
  if (typeof d.input === "string") {
    inputs = [d.input];
  } else if (Array.isArray(d.input) && d.input.every((p) => typeof p === "string") && d.input.length > 0) {
    inputs = d.input as string[];
  } else {
    throw new SpecError(`${specPath}: "input" must be a CSV path or a non-empty list of paths`);
  }
  if (inputs.length > 1 && kind !== "convergence") {
    throw new SpecError(`${specPath}: only convergence figures accept multiple inputs`);
  }

  if (typeof d.output !== "string" || d.output === "") {
    throw new SpecError(`${specPath}: "output" must be the image path to write`);
  }

  const base = path.dirname(specPath);
  const resolve = (p: string) => (path.isAbsolute(p) ? p : path.join(base, p));
  const [xDefault, yDefault] = DEFAULT_LABELS[kind as FigureKind];
  return {
    kind: kind as FigureKind,
    inputs: inputs.map(resolve),
    output: resolve(d.output),
    title: typeof d.title === "string" ? d.title : "",
    xLabel: typeof d.x_label === "string" ? d.x_label : xDefault,
    yLabel: typeof d.y_label === "string" ? d.y_label : yDefault,
  };
}
