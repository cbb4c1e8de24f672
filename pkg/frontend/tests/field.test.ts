import { describe, expect, it } from "vitest";

import { FieldOverlay, heatColor, rasterArrows, rasterHeatmap } from "../src/field.js";
import type { FieldRaster } from "../src/protocol.js";

function syntheticRaster(): FieldRaster {
  // 2x2 grid with hand-picked vectors
  return {
    plane: "xy",
    us: [0.1, 0.2],
    vs: [0.0, 0.1],
    vectors: [
      [0.03, 0.04, 0.0],
      [0.0, 0.0, 0.02],
      [-0.01, 0.0, 0.0],
      [0.0, -0.05, 0.0],
    ],
    magnitudes: [0.05, 0.02, 0.01, 0.05],
    sigmas: [0.0, 0.0002, 0.0004, 0.0005],
    confident: [true, true, true, false],
    prior_variance: 0.0005,
  };
}

describe("rasterArrows", () => {
  it("produces unit plane directions and keeps magnitudes", () => {
    const arrows = rasterArrows(syntheticRaster());
    expect(arrows).toHaveLength(4);
    expect(arrows[0].dx).toBeCloseTo(0.6, 12); // (0.03, 0.04) normalized
    expect(arrows[0].dy).toBeCloseTo(0.8, 12);
    expect(arrows[0].magnitude).toBe(0.05);
    // a purely out-of-plane vector has no plane direction
    expect(arrows[1].dx).toBe(0);
    expect(arrows[1].dy).toBe(0);
    expect(arrows[3].dy).toBeCloseTo(-1, 12);
  });

  it("lays out cells row-major over vs x us", () => {
    const arrows = rasterArrows(syntheticRaster());
    expect([arrows[0].x0, arrows[0].y0]).toEqual([0.1, 0.0]);
    expect([arrows[1].x0, arrows[1].y0]).toEqual([0.2, 0.0]);
    expect([arrows[2].x0, arrows[2].y0]).toEqual([0.1, 0.1]);
  });
});

describe("rasterHeatmap", () => {
  it("saturates at the prior variance ceiling", () => {
    const cells = rasterHeatmap(syntheticRaster());
    expect(cells[0].fraction).toBe(0);
    expect(cells[3].fraction).toBe(1); // sigma == prior
    expect(cells[3].color).toBe(heatColor(1));
  });
});

describe("FieldOverlay staleness", () => {
  it("flags stale after corrections until refreshed", () => {
    const overlay = new FieldOverlay();
    overlay.markStale();
    expect(overlay.stale).toBe(false); // nothing rendered yet
    overlay.update(syntheticRaster());
    expect(overlay.stale).toBe(false);
    overlay.markStale();
    expect(overlay.stale).toBe(true);
    overlay.update(syntheticRaster());
    expect(overlay.stale).toBe(false);
  });
});
