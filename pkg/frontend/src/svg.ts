/** Tiny deterministic SVG builders: fixed number formatting, no timestamps. */

export function fmt(value: number): string {
  if (!Number.isFinite(value)) return "0";
  const rounded = Math.round(value * 1000) / 1000;
  return Object.is(rounded, -0) ? "0" : String(rounded);
}

export function tag(name: string, attrs: Record<string, string | number>, body = ""): string {
  const rendered = Object.entries(attrs)
    .map(([key, value]) => `${key}="${typeof value === "number" ? fmt(value) : value}"`)
    .join(" ");
  return body === "" ? `<${name} ${rendered}/>` : `<${name} ${rendered}>${body}</${name}>`;
}

export function circle(cx: number, cy: number, r: number, style: Record<string, string | number>): string {
  return tag("circle", { cx, cy, r, ...style });
}

export function line(x1: number, y1: number, x2: number, y2: number, style: Record<string, string | number>): string {
  return tag("line", { x1, y1, x2, y2, ...style });
}

export function polyline(points: Array<[number, number]>, style: Record<string, string | number>): string {
  const path = points.map(([x, y]) => `${fmt(x)},${fmt(y)}`).join(" ");
  return tag("polyline", { points: path, fill: "none", ...style });
}

export function text(x: number, y: number, content: string, style: Record<string, string | number> = {}): string {
  return tag("text", { x, y, "font-family": "sans-serif", ...style }, content);
}

export function svgDocument(width: number, height: number, children: string[]): string {
  const head = `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" viewBox="0 0 ${width} ${height}">`;
  return [head, tag("rect", { x: 0, y: 0, width, height, fill: "white" }), ...children, "</svg>", ""].join("\n");
}

export interface Mapper {
  x(value: number): number;
  y(value: number): number;
  scale(value: number): number;
}

/** Affine world-to-canvas map preserving aspect ratio, world y up. */
export function makeMapper(
  xRange: [number, number],
  yRange: [number, number],
  width: number,
  height: number,
  margin: number,
): Mapper {
  const spanX = xRange[1] - xRange[0] || 1;
  const spanY = yRange[1] - yRange[0] || 1;
  const scale = Math.min((width - 2 * margin) / spanX, (height - 2 * margin) / spanY);
  const offsetX = margin + ((width - 2 * margin) - spanX * scale) / 2;
  const offsetY = margin + ((height - 2 * margin) - spanY * scale) / 2;
  return {
    x: (value) => offsetX + (value - xRange[0]) * scale,
    y: (value) => height - offsetY - (value - yRange[0]) * scale,
    scale: (value) => value * scale,
  };
}
