/** Roofline-utilization-over-time strips: one row per (variant, phase),
 * segments shaded by bound kind, fill height showing the achieved
 * fraction of the binding resource, group ids annotated on wide
 * segments. */
import { Table, num, requireColumns } from "../csv.js";
import { PALETTE, Svg, fmt, linearScale, noData } from "../svg.js";

const NEEDED = [
  "variant",
  "phase",
  "group_id",
  "einsum_ids",
  "t_start_s",
  "t_end_s",
  "flops_frac",
  "bw_frac",
  "bound",
];

interface Segment {
  group: string;
  start: number;
  end: number;
  frac: number;
  bound: string;
}

export function renderRooflineStrip(tables: Table[], title: string): string {
  const strips = new Map<string, Segment[]>();
  for (const t of tables) {
    if (t.rows.length === 0) continue;
    requireColumns(t, NEEDED, "utilization csv");
    for (const row of t.rows) {
      const key = `${row["variant"]} (${row["phase"]})`;
      const seg: Segment = {
        group: row["group_id"] ?? "",
        start: num(row, "t_start_s"),
        end: num(row, "t_end_s"),
        frac: row["bound"] === "compute" ? num(row, "flops_frac") : num(row, "bw_frac"),
        bound: row["bound"] ?? "",
      };
      const list = strips.get(key);
      if (list) list.push(seg);
      else strips.set(key, [seg]);
    }
  }
  const width = 860;
  const rowH = 46;
  const top = 42;
  const left = 170;
  const height = top + strips.size * rowH + 46;
  if (strips.size === 0) {
    return noData(width, 220, title);
  }

  const tMax = Math.max(...[...strips.values()].flat().map((s) => s.end));
  const x = linearScale(tMax, left, width - 24);
  const svg = new Svg(width, height);
  svg.text(16, 22, title, 13);

  let i = 0;
  for (const [name, segs] of strips) {
    const y0 = top + i * rowH;
    const laneH = rowH - 12;
    svg.text(left - 8, y0 + laneH / 2 + 4, name, 11, PALETTE.text, "end");
    svg.line(left, y0 + laneH, x(tMax), y0 + laneH, PALETTE.grid);
    for (const s of segs) {
      const w = x(s.end) - x(s.start);
      const memory = s.bound === "memory";
      const light = memory ? PALETTE.memoryLight : PALETTE.computeLight;
      const dark = memory ? PALETTE.memory : PALETTE.compute;
      svg.rect(x(s.start), y0, w, laneH, light);
      const h = laneH * Math.min(1, Math.max(0, s.frac));
      svg.rect(x(s.start), y0 + (laneH - h), w, h, dark);
      if (w > 26) {
        svg.text(x(s.start) + w / 2, y0 + laneH / 2 + 4, s.group, 10, PALETTE.label, "middle");
      }
    }
    i += 1;
  }

  const axisY = top + strips.size * rowH + 6;
  svg.line(left, axisY, x(tMax), axisY, PALETTE.axis);
  for (const f of [0, 0.25, 0.5, 0.75, 1]) {
    const tx = left + f * (x(tMax) - left);
    svg.line(tx, axisY, tx, axisY + 4, PALETTE.axis);
    svg.text(tx, axisY + 16, `${fmt(f * tMax * 1e3)} ms`, 10, PALETTE.text, "middle");
  }
  svg.rect(left, axisY + 22, 10, 10, PALETTE.compute);
  svg.text(left + 14, axisY + 31, "compute-bound", 10);
  svg.rect(left + 120, axisY + 22, 10, 10, PALETTE.memory);
  svg.text(left + 134, axisY + 31, "memory-bound (fill = achieved fraction)", 10);
  return svg.render();
}
