/**
 * Strict parser for the CSV files emitted by the fluxschemes CLI: header row,
 * LF line endings, '.' decimal separator, minimal RFC-4180 quoting.  Schema
 * errors name the missing column so misdirected files fail loudly.
 */

import * as fs from "fs";

export class SchemaError extends Error {}

export interface Csv {
  path: string;
  header: string[];
  rows: string[][];
}

function splitLine(line: string, path: string, lineNo: number): string[] {
  const out: string[] = [];
  let cur = "";
  let quoted = false;
  for (let i = 0; i < line.length; i++) {
    const ch = line[i];
    if (quoted) {
      if (ch === '"') {
        if (line[i + 1] === '"') {
          cur += '"';
          i++;
        } else {
          quoted = false;
        }
      } else {
        cur += ch;
      }
    } else if (ch === '"' && cur === "") {
      quoted = true;
    } else if (ch === ",") {
      out.push(cur);
      cur = "";
    } else {
      cur += ch;
    }
  }
  if (quoted) {
    throw new SchemaError(`${path}:${lineNo}: unterminated quote`);
  }
  out.push(cur);
  return out;
}

export function parseCsv(path: string): Csv {
  const text = fs.readFileSync(path, "utf8");
  const lines = text.split("\n");
  if (lines.length > 0 && lines[lines.length - 1] === "") {
    lines.pop();
  }
  if (lines.length === 0) {
    throw new SchemaError(`${path}: empty file (expected a header row)`);
  }
  const header = splitLine(lines[0], path, 1);
  const rows: string[][] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = splitLine(lines[i], path, i + 1);
    if (cells.length !== header.length) {
      throw new SchemaError(
        `${path}:${i + 1}: row has ${cells.length} cells, header has ${header.length}`,
      );
    }
    rows.push(cells);
  }
  return { path, header, rows };
}

/** Column accessor that names the column in its error message. */
export function columnIndex(csv: Csv, name: string): number {
  const idx = csv.header.indexOf(name);
  if (idx < 0) {
    throw new SchemaError(
      `${csv.path}: missing column "${name}" (header: ${csv.header.join(",")})`,
    );
  }
  return idx;
}

export function requireColumns(csv: Csv, names: string[]): void {
  for (const name of names) {
    columnIndex(csv, name);
  }
}

export function numberCell(csv: Csv, row: number, col: number): number {
  const raw = csv.rows[row][col];
  if (raw === "nan" || raw === "-nan") {
    return NaN;
  }
  const v = Number(raw);
  if (raw.trim() === "" || Number.isNaN(v)) {
    throw new SchemaError(
      `${csv.path}: row ${row + 2}, column "${csv.header[col]}": not a number: "${raw}"`,
    );
  }
  return v;
}

/** true / false / undefined (tri-state estimate flag). */
export function flagCell(csv: Csv, row: number, col: number): boolean | null {
  const raw = csv.rows[row][col];
  if (raw === "true") return true;
  if (raw === "false") return false;
  if (raw === "undefined") return null;
  throw new SchemaError(
    `${csv.path}: row ${row + 2}, column "${csv.header[col]}": not a flag: "${raw}"`,
  );
}
