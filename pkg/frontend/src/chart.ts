// Inline SVG line chart for the per-iteration metric history. All tracked
// metrics live in [0, 1], so the y axis is fixed there and a new point can
// never rescale the old ones mid-session.

export interface Series {
  label: string;
  color: string;
  points: number[]; // one value per completed iteration, in order
}

const PAD = 18;

export function xAt(i: number, n: number, width: number): number {
  if (n <= 1) return width / 2;
  return PAD + (i * (width - 2 * PAD)) / (n - 1);
}

export function yAt(value: number, height: number): number {
  const v = Math.min(1, Math.max(0, value));
  return height - PAD - v * (height - 2 * PAD);
}

/** "M x0 y0 L x1 y1 ..." for one series; empty string when under 2 points. */
export function pathFor(points: number[], width: number, height: number): string {
  if (points.length < 2) return "";
  return points
    .map((p, i) => `${i === 0 ? "M" : "L"} ${xAt(i, points.length, width).toFixed(1)} ${yAt(p, height).toFixed(1)}`)
    .join(" ");
}

export function chartSvg(series: Series[], width = 420, height = 180): string {
  const n = Math.max(...series.map((s) => s.points.length), 0);
  const grid = [0, 0.5, 1]
    .map((v) => {
      const y = yAt(v, height).toFixed(1);
      return (
        `<line x1="${PAD}" y1="${y}" x2="${width - PAD}" y2="${y}" class="chart-grid"></line>` +
        `<text x="2" y="${y}" class="chart-tick">${v}</text>`
      );
    })
    .join("");
  const lines = series
    .map((s) => {
      const path = pathFor(s.points, width, height);
      const dots = s.points
        .map(
          (p, i) =>
            `<circle cx="${xAt(i, s.points.length, width).toFixed(1)}" cy="${yAt(p, height).toFixed(1)}" r="3" fill="${s.color}"></circle>`,
        )
        .join("");
      return (path ? `<path d="${path}" fill="none" stroke="${s.color}" stroke-width="1.5"></path>` : "") + dots;
    })
    .join("");
  const legend = series
    .map(
      (s, i) =>
        `<circle cx="${PAD + i * 90}" cy="10" r="4" fill="${s.color}"></circle>` +
        `<text x="${PAD + i * 90 + 8}" y="13" class="chart-label">${s.label}</text>`,
    )
    .join("");
  const caption = n > 0 ? `<text x="${width - PAD}" y="${height - 4}" text-anchor="end" class="chart-label">${n} snapshot${n === 1 ? "" : "s"}</text>` : "";
  return `<svg viewBox="0 0 ${width} ${height}" role="img">${grid}${lines}${legend}${caption}</svg>`;
}
