// Scripted browser session against the real service: draw a demonstration,
// train, run two correction rounds and an autonomous rollout, then check the
// dashboard against the exported session archive; the safety-key release must
// halt telemetry-visible motion within two telemetry frames. Finally the
// rendered field overlay is checked cell-by-cell against the service raster.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, readFileSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import WebSocket from "ws";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { TeachingConsole } from "../src/app.js";
import { rasterArrows } from "../src/field.js";
import { IDLE_SNAPSHOT } from "../src/input.js";
import { ServiceClient, type SocketLike, type TelemetryFrame } from "../src/protocol.js";

const PORT = 8791;
let server: ChildProcess;
let dataDir: string;

function wrapNodeSocket(ws: WebSocket): SocketLike {
  return {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    set onmessage(handler: (event: { data: unknown }) => void) {
      ws.on("message", (data) => handler({ data: data.toString() }));
    },
    set onclose(handler: () => void) {
      ws.on("close", handler);
    },
  };
}

async function connect(): Promise<ServiceClient> {
  for (let attempt = 0; attempt < 60; attempt++) {
    try {
      const ws = new WebSocket(`ws://127.0.0.1:${PORT}`);
      await new Promise((resolve, reject) => {
        ws.once("open", resolve);
        ws.once("error", reject);
      });
      return new ServiceClient(wrapNodeSocket(ws));
    } catch {
      await new Promise((r) => setTimeout(r, 250));
    }
  }
  throw new Error("service did not come up");
}

// pick & place geometry of the bundled curved bench, drawn as a human would
function drawDemo(console_: TeachingConsole): void {
  const capture = console_.capture;
  const start = { u: 0.1, v: -0.25, z: 0.1 };
  const object = { u: 0.42, v: 0.0, z: 0.028 };
  const goal = { u: 0.16, v: 0.28, z: 0.028 };
  const ctrl1 = { u: 0.4, v: -0.3 };
  const ctrl2 = { u: 0.46, v: 0.32 };
  let t = 0;
  const bez = (a: number, c: number, b: number, s: number) =>
    (1 - s) * (1 - s) * a + 2 * s * (1 - s) * c + s * s * b;
  // approach over ~4 s at 25 Hz
  for (let i = 0; i <= 100; i++) {
    const s = i / 100;
    capture.addPathPoint({ t, u: bez(start.u, ctrl1.u, object.u, s), v: bez(start.v, ctrl1.v, object.v, s) });
    t += 0.04;
  }
  // pause at the object while closing the gripper
  capture.setGripper(t, 0.034);
  for (let i = 0; i < 35; i++) {
    capture.addPathPoint({ t, u: object.u, v: object.v });
    t += 0.04;
  }
  // transport to the goal
  for (let i = 0; i <= 100; i++) {
    const s = i / 100;
    capture.addPathPoint({ t, u: bez(object.u, ctrl2.u, goal.u, s), v: bez(object.v, ctrl2.v, goal.v, s) });
    t += 0.04;
  }
  // release at the goal
  capture.setGripper(t, 0.08);
  for (let i = 0; i < 20; i++) {
    capture.addPathPoint({ t, u: goal.u, v: goal.v });
    t += 0.04;
  }
  // height profile in the side view: sweep low into the object, carry low
  capture.addHeightPoint({ t: 0, u: start.u, v: 0.1 });
  capture.addHeightPoint({ t: 1, u: 0.25, v: 0.035 });
  capture.addHeightPoint({ t: 2, u: object.u, v: 0.028 });
  capture.addHeightPoint({ t: 3, u: 0.3, v: 0.05 });
  capture.addHeightPoint({ t: 4, u: goal.u, v: 0.03 });
}

async function waitForRoundDone(console_: TeachingConsole, timeoutMs = 120000): Promise<void> {
  const started = Date.now();
  while (console_.roundActive) {
    if (Date.now() - started > timeoutMs) throw new Error("round never finished");
    await new Promise((r) => setTimeout(r, 50));
  }
}

beforeAll(async () => {
  dataDir = mkdtempSync(join(tmpdir(), "teach-console-"));
  server = spawn("python3", [
    "-c",
    [
      "import asyncio",
      "from muds.service import serve",
      `asyncio.run(serve(host='127.0.0.1', port=${PORT}, realtime=True,`,
      ` data_dir='${dataDir}'))`,
    ].join("\n"),
  ], { stdio: "ignore" });
}, 30000);

afterAll(() => {
  server?.kill();
});

describe("scripted console session", () => {
  it("runs demo -> train -> two correction rounds -> autonomous, dashboard matches the archive", async () => {
    const client = await connect();
    const console_ = new TeachingConsole(client);
    await console_.connectSession();

    await console_.beginDemo();
    drawDemo(console_);
    const demo = await console_.submitDemo();
    expect(demo.samples).toBeGreaterThan(80);
    expect(console_.state).toBe("Demonstrating");

    await console_.train();
    await console_.waitForState("Correcting");

    // round 1: hold the safety key, press scaling a few times mid-flight
    await console_.startRound({ seed: 0 });
    let presses = 0;
    while (console_.roundActive && presses < 6) {
      console_.handleInput({ ...IDLE_SNAPSHOT, safetyHeld: true });
      await new Promise((r) => setTimeout(r, 120));
      console_.handleInput({ ...IDLE_SNAPSHOT, safetyHeld: true, scalingUp: true });
      presses += 1;
    }
    console_.handleInput({ ...IDLE_SNAPSHOT, safetyHeld: true });
    await waitForRoundDone(console_);
    expect(console_.dashboard.rounds).toBe(1);
    const scalingAfterRoundOne = console_.dashboard.aspectSeconds["scaling"] ?? 0;
    expect(scalingAfterRoundOne).toBeGreaterThan(0);

    // round 2: release the safety key early; motion must halt within two
    // telemetry frames of the release
    await console_.startRound({ seed: 1 });
    for (let i = 0; i < 4 && console_.roundActive; i++) {
      console_.handleInput({ ...IDLE_SNAPSHOT, safetyHeld: true });
      await new Promise((r) => setTimeout(r, 80));
    }
    const framesBeforeRelease = console_.telemetry.length;
    console_.handleInput({ ...IDLE_SNAPSHOT, safetyHeld: false }); // release
    await waitForRoundDone(console_);
    const framesAfter = console_.telemetry.length - framesBeforeRelease;
    expect(framesAfter).toBeLessThanOrEqual(2);
    expect(console_.dashboard.lastOutcome).toBe("Timeout"); // stopped round
    expect(console_.dashboard.rounds).toBe(2);

    // autonomous rollout: no corrections accepted
    await console_.startRound({ seed: 2, autonomous: true });
    console_.handleInput({ ...IDLE_SNAPSHOT, scalingUp: true }); // ignored
    await waitForRoundDone(console_);
    expect(console_.dashboard.rounds).toBe(3);

    // dashboard numbers equal the service archive exactly
    const exported = await console_.exportArchive("console-session.archive");
    const envelope = JSON.parse(readFileSync(exported.path, "utf-8"));
    const timers = envelope.payload.timers;
    expect(console_.dashboard.timers).toEqual(exported.timers);
    expect(timers.rounds).toBe(console_.dashboard.rounds);
    expect(timers.feedback_s).toBeCloseTo(
      Object.values(console_.dashboard.aspectSeconds).reduce((a, b) => a + b, 0),
      9,
    );
    expect(envelope.payload.rounds).toHaveLength(3);
    const archivedExec = envelope.payload.rounds[2].execution_time;
    expect(console_.dashboard.lastExecutionTime).toBe(archivedExec);

    // field overlay correctness: rendered arrows at sampled cells equal the
    // service raster values
    const raster = await console_.refreshField({
      mins: [0.05, -0.3],
      maxs: [0.55, 0.35],
      fixed: 0.03,
      resolution: 6,
    });
    const arrows = rasterArrows(raster);
    expect(arrows).toHaveLength(36);
    for (let k = 0; k < 10; k++) {
      const idx = Math.floor((k * 36) / 10);
      const arrow = arrows[idx];
      const vec = raster.vectors[idx];
      expect(arrow.magnitude).toBe(raster.magnitudes[idx]);
      const planeNorm = Math.hypot(vec[0], vec[1]);
      if (planeNorm > 1e-12) {
        expect(arrow.dx * planeNorm).toBeCloseTo(vec[0], 9);
        expect(arrow.dy * planeNorm).toBeCloseTo(vec[1], 9);
      }
      const row = Math.floor(idx / raster.us.length);
      const col = idx % raster.us.length;
      expect(arrow.x0).toBe(raster.us[col]);
      expect(arrow.y0).toBe(raster.vs[row]);
    }
  }, 180000);
});
