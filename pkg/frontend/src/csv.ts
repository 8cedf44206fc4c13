/** Strict CSV handling for the run-log schemas. */

export class SchemaError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "SchemaError";
  }
}

/**
 * Parse simple comma-separated data (the logs never quote fields) and
 * validate the header against the expected column list exactly; any missing
 * or unexpected column fails loudly by name.
 */
export function parseCsv(text: string, expectedColumns: readonly string[]): Record<string, string>[] {
  const lines = text.split(/\r?\n/).filter((line) => line.length > 0);
  if (lines.length === 0) {
    throw new SchemaError("empty CSV");
  }
  const header = (lines[0] as string).split(",");
  for (const column of expectedColumns) {
    if (!header.includes(column)) {
      throw new SchemaError(`missing column: ${column}`);
    }
  }
  for (const column of header) {
    if (!expectedColumns.includes(column)) {
      throw new SchemaError(`unexpected column: ${column}`);
    }
  }
  const rows: Record<string, string>[] = [];
  for (let i = 1; i < lines.length; i++) {
    const cells = (lines[i] as string).split(",");
    if (cells.length !== header.length) {
      throw new SchemaError(`row ${i} has ${cells.length} cells, expected ${header.length}`);
    }
    const row: Record<string, string> = {};
    header.forEach((column, idx) => {
      row[column] = cells[idx] as string;
    });
    rows.push(row);
  }
  return rows;
}

export function toNumber(value: string, column: string): number {
  if (value === "nan") return NaN;
  const parsed = Number(value);
  if (Number.isNaN(parsed)) {
    throw new SchemaError(`column ${column} holds a non-numeric value: ${value}`);
  }
  return parsed;
}
