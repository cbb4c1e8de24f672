// Demonstration drawing: the top view (x-y) pointer path provides the plane
// trajectory at the user's drawing speed; an optional side-view (x-z) stroke
// provides a height profile that is fused by path progress. Gripper keys
// toggle width targets during the draw; orientation comes from per-segment
// presets, since freehand three-angle input is not usable.

export interface RawSample {
  t: number;
  position: [number, number, number];
  angles: [number, number, number];
  width: number;
}

export interface PointerPoint {
  t: number; // seconds
  u: number; // first plane axis, meters (world)
  v: number; // second plane axis, meters (world)
}

export const ORIENTATION_PRESETS: Record<string, [number, number, number]> = {
  "gripper-down": [0, 0, 0],
  "gripper-down-turned": [0, 0, 0.8],
  "gripper-forward": [0, 1.2, 0],
};

export class DemoCapture {
  private path: PointerPoint[] = [];
  private heights: PointerPoint[] = [];
  private widthEvents: Array<{ t: number; width: number }> = [];
  private preset: [number, number, number] = ORIENTATION_PRESETS["gripper-down"];
  defaultHeight = 0.05;
  openWidth = 0.08;

  addPathPoint(point: PointerPoint): void {
    this.path.push(point);
  }

  addHeightPoint(point: PointerPoint): void {
    this.heights.push(point);
  }

  setGripper(t: number, width: number): void {
    this.widthEvents.push({ t, width });
  }

  setOrientationPreset(name: keyof typeof ORIENTATION_PRESETS): void {
    this.preset = ORIENTATION_PRESETS[name] ?? this.preset;
  }

  clear(): void {
    this.path = [];
    this.heights = [];
    this.widthEvents = [];
  }

  get sampleCount(): number {
    return this.path.length;
  }

  // A demo needs at least two samples and a nonzero duration; mirrors the
  // service-side rejection so bad drafts never leave the client.
  validate(): string | null {
    if (this.path.length < 2) return "draw a longer path (need at least 2 samples)";
    const duration = this.path[this.path.length - 1].t - this.path[0].t;
    if (duration <= 0) return "path has no duration";
    return null;
  }

  private heightAtProgress(progress: number): number {
    if (this.heights.length === 0) return this.defaultHeight;
    if (this.heights.length === 1) return this.heights[0].v;
    const n = this.heights.length;
    const idx = Math.min(Math.floor(progress * (n - 1)), n - 2);
    const frac = progress * (n - 1) - idx;
    return this.heights[idx].v * (1 - frac) + this.heights[idx + 1].v * frac;
  }

  private widthAt(t: number): number {
    let width = this.openWidth;
    for (const event of this.widthEvents) {
      if (event.t <= t) width = event.width;
    }
    return width;
  }

  // Fuses the strokes into a stream of raw samples at the drawing speed.
  build(): RawSample[] {
    const error = this.validate();
    if (error) throw new Error(error);
    const t0 = this.path[0].t;
    const n = this.path.length;
    return this.path.map((p, i) => ({
      t: p.t - t0,
      position: [p.u, p.v, this.heightAtProgress(n > 1 ? i / (n - 1) : 0)] as [
        number, number, number],
      angles: [...this.preset] as [number, number, number],
      width: this.widthAt(p.t),
    }));
  }
}
