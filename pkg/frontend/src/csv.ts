/** Minimal CSV handling for the cost-model schemas (no quoting in them). */

export interface Table {
  columns: string[];
  rows: Record<string, string>[];
}

export class MissingColumnError extends Error {
  constructor(column: string, context: string) {
    super(`missing column '${column}' in ${context}`);
    this.name = "MissingColumnError";
  }
}

export function parseCsv(text: string, context = "csv"): Table {
  const lines = text.split(/\r?\n/).filter((ln) => ln.trim().length > 0);
  if (lines.length === 0) {
    return { columns: [], rows: [] };
  }
  const columns = (lines[0] ?? "").split(",").map((c) => c.trim());
  const rows: Record<string, string>[] = [];
  for (const line of lines.slice(1)) {
    const parts = line.split(",");
    const row: Record<string, string> = {};
    columns.forEach((col, i) => {
      row[col] = (parts[i] ?? "").trim();
    });
    rows.push(row);
  }
  return { columns, rows };
}

export function requireColumns(table: Table, needed: string[], context: string): void {
  for (const col of needed) {
    if (!table.columns.includes(col)) {
      throw new MissingColumnError(col, context);
    }
  }
}

export function num(row: Record<string, string>, col: string): number {
  const v = Number(row[col]);
  if (!Number.isFinite(v)) {
    throw new Error(`non-numeric value '${row[col]}' in column '${col}'`);
  }
  return v;
}
