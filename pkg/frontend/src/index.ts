export { parseCsv, columnIndex, requireColumns, numberCell, flagCell, SchemaError } from "./csv";
export { parseFigureSpec, SpecError, FIGURE_KINDS } from "./spec";
export type { FigureSpec, FigureKind } from "./spec";
export { renderConvergence, renderStabilityMap, renderNormTrace, formatSlope } from "./render";
export { renderFigure } from "./cli";
