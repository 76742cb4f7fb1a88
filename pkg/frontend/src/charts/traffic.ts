/** Stacked traffic bars per (variant, phase): intra-Einsum bytes and
 * inter-Einsum bytes, each split into the floor achieved by the best
 * plotted variant (dark) and the excess above it (light). */
import { Table, num, requireColumns } from "../csv.js";
import { PALETTE, Svg, fmtSci, linearScale, noData } from "../svg.js";

const NEEDED = [
  "variant",
  "phase",
  "bytes_intra",
  "bytes_inter_read",
  "bytes_inter_write",
];

interface Bar {
  name: string;
  intra: number;
  inter: number;
}

export function renderTrafficBars(tables: Table[], title: string): string {
  const byVariant = new Map<string, Bar>();
  for (const t of tables) {
    if (t.rows.length === 0) continue;
    requireColumns(t, NEEDED, "cost csv");
    for (const row of t.rows) {
      const key = `${row["variant"]} (${row["phase"]})`;
      const bar = byVariant.get(key) ?? { name: key, intra: 0, inter: 0 };
      bar.intra += num(row, "bytes_intra");
      bar.inter += num(row, "bytes_inter_read") + num(row, "bytes_inter_write");
      byVariant.set(key, bar);
    }
  }
  const width = 860;
  const height = 360;
  if (byVariant.size === 0) {
    return noData(width, height, title);
  }
  const bars = [...byVariant.values()];
  const interFloor = Math.min(...bars.map((b) => b.inter));
  const intraFloor = Math.min(...bars.map((b) => b.intra));
  const totalMax = Math.max(...bars.map((b) => b.intra + b.inter));

  const left = 90;
  const base = height - 70;
  const plotTop = 46;
  const y = linearScale(totalMax, 0, base - plotTop);
  const slot = (width - left - 24) / bars.length;
  const barW = Math.min(64, slot * 0.6);

  const svg = new Svg(width, height);
  svg.text(16, 22, title, 13);
  svg.line(left, base, width - 24, base, PALETTE.axis);
  svg.line(left, plotTop, left, base, PALETTE.axis);
  for (const f of [0.25, 0.5, 0.75, 1]) {
    const gy = base - f * (base - plotTop);
    svg.line(left, gy, width - 24, gy, PALETTE.grid);
    svg.text(left - 6, gy + 4, fmtSci(f * totalMax), 9, PALETTE.text, "end");
  }

  bars.forEach((b, i) => {
    const cx = left + slot * i + slot / 2;
    const x0 = cx - barW / 2;
    let cursor = base;
    const put = (v: number, fill: string) => {
      const h = y(v);
      svg.rect(x0, cursor - h, barW, h, fill);
      cursor -= h;
    };
    put(Math.min(b.intra, intraFloor), PALETTE.intra);
    put(Math.max(0, b.intra - intraFloor), PALETTE.intraLight);
    put(Math.min(b.inter, interFloor), PALETTE.memory);
    put(Math.max(0, b.inter - interFloor), PALETTE.memoryLight);
    svg.text(cx, base + 14, b.name, 9, PALETTE.text, "middle");
  });

  const ly = height - 34;
  const legend: [string, string][] = [
    [PALETTE.intra, "intra (best-variant floor)"],
    [PALETTE.intraLight, "intra excess"],
    [PALETTE.memory, "inter (best-variant floor)"],
    [PALETTE.memoryLight, "inter excess"],
  ];
  let lx = left;
  for (const [color, label] of legend) {
    svg.rect(lx, ly, 10, 10, color);
    svg.text(lx + 14, ly + 9, label, 10);
    lx += 14 + label.length * 6.4 + 22;
  }
  svg.text(16, height - 10, "bytes per layer (stacked); dark = floor across plotted variants, light = excess", 10, PALETTE.axis);
  return svg.render();
}
