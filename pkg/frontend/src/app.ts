// The teaching console controller: DOM-free so tests can drive a scripted
// session end to end. It owns the view state, streams drawn demonstrations to
// the service, forwards mapped corrections during live rounds (idempotent,
// stop with priority), keeps the per-round dashboard, and tracks traces for
// rendering. All learning lives behind the service protocol.

import { DemoCapture } from "./demoCapture.js";
import { FieldOverlay } from "./field.js";
import { InputMapper, type InputSnapshot } from "./input.js";
import {
  type CorrectionKind,
  type FieldRaster,
  type PushMessage,
  type Response,
  type RoundDone,
  ServiceClient,
  type SessionState,
  type SessionTimers,
  type TelemetryFrame,
} from "./protocol.js";

export type InputMode = "Demonstrate" | "Correct" | "Observe";
export type PlaneName = "xy" | "xz";

export interface ViewState {
  plane: PlaneName;
  zoom: number;
  panU: number;
  panV: number;
  showVectorField: boolean;
  showVarianceHeatmap: boolean;
  showDemoTrace: boolean;
  showRolloutTrace: boolean;
  showMarkers: boolean;
  mode: InputMode;
}

export interface Dashboard {
  rounds: number;
  aspectSeconds: Record<string, number>;
  lastExecutionTime: number | null;
  lastOutcome: string | null;
  lastAde: number | null;
  successStreak: number;
  timers: SessionTimers | null;
}

const EMPTY_DASHBOARD: Dashboard = {
  rounds: 0,
  aspectSeconds: {},
  lastExecutionTime: null,
  lastOutcome: null,
  lastAde: null,
  successStreak: 0,
  timers: null,
};

export class TeachingConsole {
  client: ServiceClient;
  session: string | null = null;
  state: SessionState = "Idle";
  view: ViewState = {
    plane: "xy",
    zoom: 1,
    panU: 0,
    panV: 0,
    showVectorField: false,
    showVarianceHeatmap: false,
    showDemoTrace: true,
    showRolloutTrace: true,
    showMarkers: true,
    mode: "Observe",
  };
  capture = new DemoCapture();
  overlay = new FieldOverlay();
  mapper = new InputMapper();
  dashboard: Dashboard = { ...EMPTY_DASHBOARD, aspectSeconds: {} };
  telemetry: TelemetryFrame[] = [];
  rolloutTrace: Array<[number, number, number]> = [];
  demoTrace: Array<[number, number, number]> = [];
  eventMarkers: Array<{ t: number; kind: string }> = [];
  roundActive = false;
  private correctionSerial = 0;
  private stopSent = false;

  constructor(client: ServiceClient) {
    this.client = client;
    client.onPush((message) => this.onPush(message));
  }

  private onPush(message: PushMessage): void {
    if (this.session !== null && message.session !== this.session) return;
    switch (message.event) {
      case "state":
        this.state = message.state;
        if (message.state !== "RollingOut") this.roundActive = false;
        break;
      case "telemetry":
        this.telemetry.push(message);
        this.rolloutTrace.push([message.x[0], message.x[1], message.x[2]]);
        break;
      case "sim": {
        const kind = message.record.kind;
        if (kind === "pick" || kind === "topple" || kind === "place"
            || kind === "drop" || kind === "grasp_missed" || kind === "stuck") {
          this.eventMarkers.push({ t: message.record.t, kind });
        }
        if (kind === "correction") this.overlay.markStale();
        break;
      }
      case "round_done":
        this.applyRoundDone(message);
        break;
    }
  }

  private applyRoundDone(done: RoundDone): void {
    this.roundActive = false;
    this.dashboard.rounds = done.timers.rounds;
    this.dashboard.lastExecutionTime = done.execution_time;
    this.dashboard.lastOutcome = done.outcome;
    this.dashboard.lastAde = done.ade;
    this.dashboard.successStreak = done.timers.success_streak;
    this.dashboard.timers = done.timers;
    for (const [aspect, seconds] of Object.entries(done.aspect_seconds)) {
      this.dashboard.aspectSeconds[aspect] =
        (this.dashboard.aspectSeconds[aspect] ?? 0) + seconds;
    }
  }

  private expectOk(response: Response): Response {
    if (!response.ok) throw new Error(response.error ?? "request failed");
    return response;
  }

  // state changes arrive as push events; await one after a request that
  // transitions the session
  waitForState(state: SessionState, timeoutMs = 10000): Promise<void> {
    const started = Date.now();
    return new Promise((resolve, reject) => {
      const poll = () => {
        if (this.state === state) return resolve();
        if (Date.now() - started > timeoutMs) {
          return reject(new Error(`state is ${this.state}, wanted ${state}`));
        }
        setTimeout(poll, 10);
      };
      poll();
    });
  }

  async connectSession(): Promise<string> {
    const out = this.expectOk(await this.client.request("create_session", {}));
    this.session = out.session as string;
    this.state = "Idle";
    await this.client.request("subscribe", { session: this.session });
    return this.session;
  }

  // -- demonstration ---------------------------------------------------------

  async beginDemo(): Promise<void> {
    this.expectOk(
      await this.client.request("begin_demo", { session: this.session }),
    );
    this.view.mode = "Demonstrate";
    this.capture.clear();
  }

  // validates locally, then streams the drawn samples to the service
  async submitDemo(): Promise<{ samples: number; duration: number }> {
    const problem = this.capture.validate();
    if (problem) throw new Error(problem);
    const raw = this.capture.build();
    this.demoTrace = raw.map((s) => s.position);
    for (const sample of raw) {
      this.expectOk(
        await this.client.request("demo_sample", {
          session: this.session,
          t: sample.t,
          position: sample.position,
          angles: sample.angles,
          width: sample.width,
        }),
      );
    }
    const out = this.expectOk(
      await this.client.request("end_demo", { session: this.session }),
    );
    this.view.mode = "Observe";
    return out as unknown as { samples: number; duration: number };
  }

  async train(config: Record<string, unknown> = {}): Promise<void> {
    this.expectOk(
      await this.client.request("train", { session: this.session, ...config }),
    );
    this.overlay.markStale();
  }

  // -- rounds -----------------------------------------------------------------

  async startRound(options: { seed?: number; autonomous?: boolean } = {}): Promise<void> {
    this.expectOk(
      await this.client.request("start_round", {
        session: this.session,
        ...options,
      }),
    );
    this.telemetry = [];
    this.rolloutTrace = [];
    this.eventMarkers = [];
    this.mapper.reset();
    this.roundActive = true;
    this.stopSent = false;
    this.view.mode = options.autonomous ? "Observe" : "Correct";
  }

  // Polled at display rate with the current input snapshot; corrections are
  // fire-and-forget with idempotency keys, stop is sent redundantly and
  // ahead of anything else queued on this tick.
  handleInput(snapshot: InputSnapshot): void {
    if (!this.roundActive || this.session === null) return;
    const intents = this.mapper.map(snapshot);
    const stop = intents.find((i) => i.kind === "stop");
    if (stop) {
      this.emitStop();
      return;
    }
    for (const intent of intents) {
      this.client.sendCorrection(
        this.session,
        intent.kind,
        intent.value,
        `${this.session}-c${this.correctionSerial++}`,
      );
      this.overlay.markStale();
    }
  }

  emitStop(): void {
    if (this.session === null || this.stopSent) return;
    this.stopSent = true;
    // redundant delivery: the dead-man stop goes out twice
    this.client.sendCorrection(this.session, "stop" as CorrectionKind, [], `${this.session}-stop-a`);
    this.client.sendCorrection(this.session, "stop" as CorrectionKind, [], `${this.session}-stop-b`);
  }

  deviceDisconnected(): void {
    if (this.roundActive) this.emitStop();
  }

  // -- overlays -----------------------------------------------------------------

  async refreshField(options: {
    mins: [number, number];
    maxs: [number, number];
    fixed: number;
    resolution?: number;
  }): Promise<FieldRaster> {
    const out = this.expectOk(
      await this.client.request("field_raster", {
        session: this.session,
        plane: this.view.plane,
        mins: options.mins,
        maxs: options.maxs,
        fixed: options.fixed,
        resolution: options.resolution ?? 25,
      }),
    );
    const raster = out as unknown as FieldRaster;
    this.overlay.update(raster);
    return raster;
  }

  async exportArchive(path: string): Promise<{ path: string; timers: SessionTimers }> {
    const out = this.expectOk(
      await this.client.request("export_archive", { session: this.session, path }),
    );
    return out as unknown as { path: string; timers: SessionTimers };
  }
}
