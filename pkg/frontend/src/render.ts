// Thin canvas layer: world-to-pixel transform plus draw passes over the
// console's view-models. No state of its own beyond the 2d context.

import type { TeachingConsole } from "./app.js";

export interface Viewport {
  width: number;
  height: number;
  metersAcross: number; // world meters spanned by the canvas width at zoom 1
  centerU: number;
  centerV: number;
}

export function worldToPixel(
  view: Viewport,
  zoom: number,
  u: number,
  v: number,
): [number, number] {
  const scale = (view.width / view.metersAcross) * zoom;
  return [
    view.width / 2 + (u - view.centerU) * scale,
    view.height / 2 - (v - view.centerV) * scale,
  ];
}

export function pixelToWorld(
  view: Viewport,
  zoom: number,
  px: number,
  py: number,
): [number, number] {
  const scale = (view.width / view.metersAcross) * zoom;
  return [
    view.centerU + (px - view.width / 2) / scale,
    view.centerV - (py - view.height / 2) / scale,
  ];
}

function planeCoords(plane: "xy" | "xz", p: [number, number, number]): [number, number] {
  return plane === "xy" ? [p[0], p[1]] : [p[0], p[2]];
}

export function drawFrame(
  ctx: CanvasRenderingContext2D,
  console_: TeachingConsole,
  viewport: Viewport,
): void {
  const { view } = console_;
  ctx.clearRect(0, 0, viewport.width, viewport.height);

  if (view.showVarianceHeatmap) {
    const cells = console_.overlay.heatmap();
    const cellPx = cells.length > 1
      ? Math.abs(worldToPixel(viewport, view.zoom, cells[1].x0, 0)[0]
        - worldToPixel(viewport, view.zoom, cells[0].x0, 0)[0]) + 1
      : 8;
    for (const cell of cells) {
      const [px, py] = worldToPixel(viewport, view.zoom, cell.x0, cell.y0);
      ctx.fillStyle = cell.color;
      ctx.fillRect(px - cellPx / 2, py - cellPx / 2, cellPx, cellPx);
    }
  }

  if (view.showVectorField) {
    const arrows = console_.overlay.arrows();
    ctx.lineWidth = 1.5;
    for (const arrow of arrows) {
      const [px, py] = worldToPixel(viewport, view.zoom, arrow.x0, arrow.y0);
      const len = 6 + 14 * Math.min(arrow.magnitude / 0.1, 1);
      ctx.strokeStyle = arrow.color;
      ctx.beginPath();
      ctx.moveTo(px, py);
      ctx.lineTo(px + arrow.dx * len, py - arrow.dy * len);
      ctx.stroke();
    }
    if (console_.overlay.stale) {
      ctx.fillStyle = "rgba(200, 60, 60, 0.9)";
      ctx.font = "12px sans-serif";
      ctx.fillText("field stale - refresh", 8, 16);
    }
  }

  const tracePass = (
    trace: Array<[number, number, number]>,
    style: string,
  ) => {
    if (trace.length < 2) return;
    ctx.strokeStyle = style;
    ctx.lineWidth = 2;
    ctx.beginPath();
    trace.forEach((p, i) => {
      const [u, v] = planeCoords(view.plane, p);
      const [px, py] = worldToPixel(viewport, view.zoom, u, v);
      if (i === 0) ctx.moveTo(px, py);
      else ctx.lineTo(px, py);
    });
    ctx.stroke();
  };
  if (view.showDemoTrace) tracePass(console_.demoTrace, "#888");
  if (view.showRolloutTrace) tracePass(console_.rolloutTrace, "#1c7ed6");

  const last = console_.telemetry[console_.telemetry.length - 1];
  if (last) {
    const [u, v] = planeCoords(view.plane, last.x);
    const [px, py] = worldToPixel(viewport, view.zoom, u, v);
    ctx.fillStyle = last.confidence_ok ? "#2b8a3e" : "#c92a2a";
    ctx.beginPath();
    ctx.arc(px, py, 6, 0, 2 * Math.PI);
    ctx.fill();
    // gripper width glyph: two prongs separated by the live width
    const scale = (viewport.width / viewport.metersAcross) * view.zoom;
    const half = (last.w / 2) * scale;
    ctx.strokeStyle = "#333";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.moveTo(px - half, py - 8);
    ctx.lineTo(px - half, py + 8);
    ctx.moveTo(px + half, py - 8);
    ctx.lineTo(px + half, py + 8);
    ctx.stroke();
  }
}

export function dashboardText(console_: TeachingConsole): string[] {
  const d = console_.dashboard;
  const aspects = Object.entries(d.aspectSeconds)
    .map(([k, v]) => `${k} ${v.toFixed(2)}s`)
    .join("  ");
  return [
    `state: ${console_.state}`,
    `rounds: ${d.rounds}   success streak: ${d.successStreak}`,
    `last: ${d.lastOutcome ?? "-"} in ${d.lastExecutionTime ?? "-"}s` +
      (d.lastAde !== null ? `  ade ${d.lastAde}` : ""),
    `corrections: ${aspects || "-"}`,
    d.timers
      ? `demo ${d.timers.demo_s.toFixed(1)}s  feedback ${d.timers.feedback_s.toFixed(2)}s  total ${d.timers.total_s.toFixed(1)}s`
      : "",
  ];
}
