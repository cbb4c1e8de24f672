// Browser entry: binds the console controller to the DOM, the keyboard and
// (when present) a gamepad, and runs the render loop.

import { TeachingConsole } from "./app.js";
import { gamepadSnapshot, KeyboardSource } from "./input.js";
import { ServiceClient, type SocketLike } from "./protocol.js";
import { dashboardText, drawFrame, pixelToWorld, type Viewport } from "./render.js";

const WS_URL = (window as unknown as { TEACH_WS_URL?: string }).TEACH_WS_URL
  ?? "ws://127.0.0.1:8765";

function wrapBrowserSocket(ws: WebSocket): SocketLike {
  return {
    send: (data) => ws.send(data),
    close: () => ws.close(),
    set onmessage(handler: (event: { data: unknown }) => void) {
      ws.onmessage = handler;
    },
    set onclose(handler: () => void) {
      ws.onclose = handler;
    },
  };
}

async function boot(): Promise<void> {
  const canvas = document.getElementById("view") as HTMLCanvasElement;
  const hud = document.getElementById("hud") as HTMLElement;
  const ctx = canvas.getContext("2d")!;
  const socket = new WebSocket(WS_URL);
  await new Promise((resolve, reject) => {
    socket.onopen = resolve;
    socket.onerror = reject;
  });
  const client = new ServiceClient(wrapBrowserSocket(socket));
  const console_ = new TeachingConsole(client);
  client.onDisconnect = () => console_.deviceDisconnected();
  await console_.connectSession();

  const viewport: Viewport = {
    width: canvas.width,
    height: canvas.height,
    metersAcross: 0.9,
    centerU: 0.28,
    centerV: 0.02,
  };

  const keyboard = new KeyboardSource();
  window.addEventListener("keydown", (e) => keyboard.keyDown(e.key));
  window.addEventListener("keyup", (e) => keyboard.keyUp(e.key));
  window.addEventListener("gamepaddisconnected", () => console_.deviceDisconnected());

  let drawing = false;
  canvas.addEventListener("pointerdown", (e) => {
    if (console_.view.mode !== "Demonstrate") return;
    drawing = true;
    const [u, v] = pixelToWorld(viewport, console_.view.zoom, e.offsetX, e.offsetY);
    console_.capture.addPathPoint({ t: performance.now() / 1000, u, v });
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!drawing) return;
    const [u, v] = pixelToWorld(viewport, console_.view.zoom, e.offsetX, e.offsetY);
    console_.capture.addPathPoint({ t: performance.now() / 1000, u, v });
  });
  window.addEventListener("pointerup", () => {
    drawing = false;
  });

  const buttons: Record<string, () => Promise<unknown> | unknown> = {
    "demo-start": () => console_.beginDemo(),
    "demo-close": () => console_.capture.setGripper(performance.now() / 1000, 0.034),
    "demo-open": () => console_.capture.setGripper(performance.now() / 1000, 0.08),
    "demo-submit": () => console_.submitDemo(),
    train: () => console_.train(),
    "round-correct": () => console_.startRound({}),
    "round-auto": () => console_.startRound({ autonomous: true }),
    "toggle-field": async () => {
      console_.view.showVectorField = !console_.view.showVectorField;
      if (console_.view.showVectorField) {
        await console_.refreshField({ mins: [0.0, -0.35], maxs: [0.6, 0.4], fixed: 0.03 });
      }
    },
    "toggle-heat": async () => {
      console_.view.showVarianceHeatmap = !console_.view.showVarianceHeatmap;
      if (console_.view.showVarianceHeatmap && !console_.overlay.raster) {
        await console_.refreshField({ mins: [0.0, -0.35], maxs: [0.6, 0.4], fixed: 0.03 });
      }
    },
    "refresh-field": () =>
      console_.refreshField({ mins: [0.0, -0.35], maxs: [0.6, 0.4], fixed: 0.03 }),
    export: () => console_.exportArchive(`console-${Date.now()}.archive`),
  };
  for (const [id, action] of Object.entries(buttons)) {
    document.getElementById(id)?.addEventListener("click", () => {
      Promise.resolve(action()).catch((err) => {
        hud.textContent = String(err);
      });
    });
  }

  const frame = () => {
    const pads = navigator.getGamepads ? navigator.getGamepads() : [];
    const pad = pads && pads[0];
    console_.handleInput(pad ? gamepadSnapshot(pad) : keyboard.snapshot());
    drawFrame(ctx, console_, viewport);
    hud.innerText = dashboardText(console_).join("\n");
    requestAnimationFrame(frame);
  };
  requestAnimationFrame(frame);
}

boot().catch((err) => {
  const hud = document.getElementById("hud");
  if (hud) hud.textContent = `connection failed: ${err}`;
});
