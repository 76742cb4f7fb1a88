#!/usr/bin/env node
/**
 * Render einfuse cost-model CSVs as deterministic SVG charts.
 *
 * Usage:
 *   plots roofline-strip --in util-a.csv --in util-b.csv --out roofline.svg
 *   plots traffic-bars   --in cost-a.csv --in cost-b.csv --out traffic.svg
 *   plots e2e-bars       --in e2e.csv --out e2e.svg [--title "..."]
 */
import * as fs from "node:fs";
import * as path from "node:path";
import { parseArgs } from "node:util";

import { MissingColumnError, parseCsv } from "./csv.js";
import { renderE2eBars } from "./charts/e2e.js";
import { renderRooflineStrip } from "./charts/roofline.js";
import { renderTrafficBars } from "./charts/traffic.js";

const KINDS = {
  "roofline-strip": { render: renderRooflineStrip, title: "roofline utilization over time" },
  "traffic-bars": { render: renderTrafficBars, title: "inter-/intra-Einsum traffic" },
  "e2e-bars": { render: renderE2eBars, title: "end-to-end speedup by scenario" },
} as const;

type Kind = keyof typeof KINDS;

export function renderKind(kind: Kind, csvTexts: string[], title?: string): string {
  const tables = csvTexts.map((t) => parseCsv(t));
  const spec = KINDS[kind];
  return spec.render(tables, title ?? spec.title);
}

function writeAtomic(file: string, text: string): void {
  const dir = path.dirname(file);
  fs.mkdirSync(dir, { recursive: true });
  const tmp = path.join(dir, `.${path.basename(file)}.tmp`);
  fs.writeFileSync(tmp, text);
  fs.renameSync(tmp, file);
}

export function main(argv: string[]): number {
  const { values, positionals } = parseArgs({
    args: argv,
    allowPositionals: true,
    options: {
      in: { type: "string", multiple: true },
      out: { type: "string" },
      title: { type: "string" },
    },
  });
  const kind = positionals[0];
  if (!kind || !(kind in KINDS)) {
    process.stderr.write(
      `usage: plots <${Object.keys(KINDS).join("|")}> --in <csv> [--in <csv> ...] --out <svg>\n`,
    );
    return 2;
  }
  const inputs = values.in ?? [];
  const out = values.out;
  if (inputs.length === 0 || !out) {
    process.stderr.write("error: at least one --in and exactly one --out are required\n");
    return 2;
  }
  let texts: string[];
  try {
    texts = inputs.map((f) => fs.readFileSync(f, "utf8"));
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`);
    return 1;
  }
  try {
    const svg = renderKind(kind as Kind, texts, values.title);
    writeAtomic(out, svg);
  } catch (err) {
    if (err instanceof MissingColumnError) {
      process.stderr.write(`error: ${err.message}\n`);
    } else {
      process.stderr.write(`error: ${(err as Error).message}\n`);
    }
    return 1;
  }
  return 0;
}

const entry = process.argv[1] ?? "";
if (entry.endsWith("main.js") || entry.endsWith("main.ts")) {
  process.exit(main(process.argv.slice(2)));
}
