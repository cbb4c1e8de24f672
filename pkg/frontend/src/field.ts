// View-model for the attractor vector-field arrows and the variance heatmap:
// pure geometry/color mapping from raster cells, exercised directly by tests
// and consumed by the canvas renderer.

import type { FieldRaster } from "./protocol.js";

export interface Arrow {
  x0: number; // world coords in the raster plane
  y0: number;
  dx: number; // unit direction in the plane
  dy: number;
  magnitude: number; // |x_des - x| in meters
  color: string;
}

export interface HeatCell {
  x0: number;
  y0: number;
  fraction: number; // sigma / (sigma_f^2 + sigma_n^2), saturates at 1
  color: string;
}

function magnitudeColor(magnitude: number, maxMagnitude: number): string {
  const s = maxMagnitude > 0 ? Math.min(magnitude / maxMagnitude, 1) : 0;
  const hue = 220 - 220 * s; // blue (slow) to red (fast)
  return `hsl(${Math.round(hue)}, 85%, 50%)`;
}

export function heatColor(fraction: number): string {
  const f = Math.min(Math.max(fraction, 0), 1);
  const lightness = 95 - 60 * f; // light on the data, dark at the prior ceiling
  return `hsl(270, 60%, ${Math.round(lightness)}%)`;
}

const PLANE_AXES: Record<"xy" | "xz", [number, number]> = {
  xy: [0, 1],
  xz: [0, 2],
};

export function rasterArrows(raster: FieldRaster): Arrow[] {
  const [ai, bi] = PLANE_AXES[raster.plane];
  const maxMagnitude = Math.max(...raster.magnitudes, 1e-9);
  const arrows: Arrow[] = [];
  let idx = 0;
  for (const v of raster.vs) {
    for (const u of raster.us) {
      const vec = raster.vectors[idx];
      const du = vec[ai];
      const dv = vec[bi];
      const planeNorm = Math.hypot(du, dv);
      arrows.push({
        x0: u,
        y0: v,
        dx: planeNorm > 1e-12 ? du / planeNorm : 0,
        dy: planeNorm > 1e-12 ? dv / planeNorm : 0,
        magnitude: raster.magnitudes[idx],
        color: magnitudeColor(raster.magnitudes[idx], maxMagnitude),
      });
      idx += 1;
    }
  }
  return arrows;
}

export function rasterHeatmap(raster: FieldRaster): HeatCell[] {
  const cells: HeatCell[] = [];
  let idx = 0;
  for (const v of raster.vs) {
    for (const u of raster.us) {
      const fraction = Math.min(raster.sigmas[idx] / raster.prior_variance, 1);
      cells.push({ x0: u, y0: v, fraction, color: heatColor(fraction) });
      idx += 1;
    }
  }
  return cells;
}

// The raster is computed server-side from the live policy; after any
// correction it is stale until re-requested, and the view flags it.
export class FieldOverlay {
  raster: FieldRaster | null = null;
  stale = false;

  update(raster: FieldRaster): void {
    this.raster = raster;
    this.stale = false;
  }

  markStale(): void {
    if (this.raster) this.stale = true;
  }

  arrows(): Arrow[] {
    return this.raster ? rasterArrows(this.raster) : [];
  }

  heatmap(): HeatCell[] {
    return this.raster ? rasterHeatmap(this.raster) : [];
  }
}
