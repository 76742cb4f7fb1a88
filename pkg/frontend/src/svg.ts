/** Deterministic SVG assembly: fixed canvas, fixed fonts, no randomness,
 * numbers always formatted through fmt() so repeated renders are
 * byte-identical. */

export const FONT = "font-family=\"Menlo, Consolas, monospace\"";

export const PALETTE = {
  bg: "#ffffff",
  axis: "#444444",
  grid: "#dddddd",
  text: "#222222",
  memory: "#c23b22",
  memoryLight: "#f2b8ae",
  compute: "#2b6cb0",
  computeLight: "#bcd7f0",
  intra: "#4a4a8f",
  intraLight: "#c3c3e6",
  label: "#b8860b",
  series: ["#2b6cb0", "#c23b22", "#2f855a", "#b7791f", "#6b46c1", "#2c7a7b", "#97266d"],
} as const;

export function fmt(x: number): string {
  if (!Number.isFinite(x)) return "0";
  const r = Math.round(x * 100) / 100;
  return Object.is(r, -0) ? "0" : String(r);
}

export function fmtSci(x: number): string {
  if (x === 0) return "0";
  return x.toExponential(2);
}

export class Svg {
  private parts: string[] = [];

  constructor(readonly width: number, readonly height: number) {
    this.parts.push(
      `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
        `viewBox="0 0 ${width} ${height}">`,
      `<rect x="0" y="0" width="${width}" height="${height}" fill="${PALETTE.bg}"/>`,
    );
  }

  rect(x: number, y: number, w: number, h: number, fill: string, opacity = 1): void {
    const op = opacity === 1 ? "" : ` fill-opacity="${fmt(opacity)}"`;
    this.parts.push(
      `<rect x="${fmt(x)}" y="${fmt(y)}" width="${fmt(Math.max(0, w))}" ` +
        `height="${fmt(Math.max(0, h))}" fill="${fill}"${op}/>`,
    );
  }

  line(x1: number, y1: number, x2: number, y2: number, stroke: string, width = 1): void {
    this.parts.push(
      `<line x1="${fmt(x1)}" y1="${fmt(y1)}" x2="${fmt(x2)}" y2="${fmt(y2)}" ` +
        `stroke="${stroke}" stroke-width="${fmt(width)}"/>`,
    );
  }

  text(
    x: number,
    y: number,
    s: string,
    size = 11,
    fill: string = PALETTE.text,
    anchor: "start" | "middle" | "end" = "start",
  ): void {
    const esc = s
      .replace(/&/g, "&amp;")
      .replace(/</g, "&lt;")
      .replace(/>/g, "&gt;");
    this.parts.push(
      `<text x="${fmt(x)}" y="${fmt(y)}" font-size="${size}" ${FONT} ` +
        `fill="${fill}" text-anchor="${anchor}">${esc}</text>`,
    );
  }

  render(): string {
    return this.parts.join("\n") + "\n</svg>\n";
  }
}

export function linearScale(
  domainMax: number,
  rangeLo: number,
  rangeHi: number,
): (v: number) => number {
  const d = domainMax <= 0 ? 1 : domainMax;
  return (v: number) => rangeLo + (v / d) * (rangeHi - rangeLo);
}

export function noData(width: number, height: number, title: string): string {
  const svg = new Svg(width, height);
  svg.text(16, 24, title, 13);
  svg.line(48, height - 40, width - 16, height - 40, PALETTE.axis);
  svg.line(48, 24, 48, height - 40, PALETTE.axis);
  svg.text(width / 2, height / 2, "no data", 14, PALETTE.axis, "middle");
  return svg.render();
}
