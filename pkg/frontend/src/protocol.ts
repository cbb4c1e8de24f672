// Wire types and a small request/response client for the teaching service.
// The console never mutates policy state locally: every learning effect goes
// through these messages.

export type SessionState =
  | "Idle"
  | "Demonstrating"
  | "Training"
  | "Correcting"
  | "RollingOut"
  | "Done";

export type CorrectionKind =
  | "attractor_xy"
  | "attractor_z"
  | "scaling_increment"
  | "gripper_increment"
  | "stop"
  | "goto_start";

export interface TelemetryFrame {
  event: "telemetry";
  session: string;
  t: number;
  x: [number, number, number];
  v: [number, number, number];
  theta: [number, number, number];
  w: number;
  held: number | null;
  confidence_ok: boolean;
}

export interface RoundDone {
  event: "round_done";
  session: string;
  outcome: string;
  execution_time: number;
  aspect_seconds: Record<string, number>;
  corrections: number;
  ade: number | null;
  round_index: number;
  timers: SessionTimers;
}

export interface SessionTimers {
  demo_s: number;
  feedback_s: number;
  total_s: number;
  rounds: number;
  success_streak: number;
}

export interface SimEvent {
  event: "sim";
  session: string;
  record: { t: number; kind: string; [k: string]: unknown };
}

export type PushMessage =
  | TelemetryFrame
  | RoundDone
  | SimEvent
  | { event: "state"; session: string; state: SessionState };

export interface FieldRaster {
  plane: "xy" | "xz";
  us: number[];
  vs: number[];
  vectors: [number, number, number][];
  magnitudes: number[];
  sigmas: number[];
  confident: boolean[];
  prior_variance: number;
}

export interface Response {
  id: number | null;
  ok: boolean;
  error?: string;
  field?: string;
  [k: string]: unknown;
}

// Minimal socket shape so the client runs on browser WebSocket and node ws.
export interface SocketLike {
  send(data: string): void;
  close(): void;
  set onmessage(handler: (event: { data: unknown }) => void);
  set onclose(handler: () => void);
}

export class ServiceClient {
  private socket: SocketLike;
  private nextId = 1;
  private pending = new Map<number, (r: Response) => void>();
  private pushHandlers: Array<(m: PushMessage) => void> = [];
  private closed = false;
  onDisconnect: (() => void) | null = null;

  constructor(socket: SocketLike) {
    this.socket = socket;
    socket.onmessage = (event) => this.dispatch(String(event.data));
    socket.onclose = () => {
      this.closed = true;
      if (this.onDisconnect) this.onDisconnect();
    };
  }

  get isClosed(): boolean {
    return this.closed;
  }

  onPush(handler: (m: PushMessage) => void): void {
    this.pushHandlers.push(handler);
  }

  private dispatch(raw: string): void {
    let message: Record<string, unknown>;
    try {
      message = JSON.parse(raw);
    } catch {
      return;
    }
    if (typeof message.id === "number" && this.pending.has(message.id)) {
      const resolve = this.pending.get(message.id)!;
      this.pending.delete(message.id);
      resolve(message as unknown as Response);
      return;
    }
    if (typeof message.event === "string") {
      for (const handler of this.pushHandlers) handler(message as unknown as PushMessage);
    }
  }

  request(type: string, fields: Record<string, unknown> = {}): Promise<Response> {
    const id = this.nextId++;
    const payload = JSON.stringify({ id, type, ...fields });
    return new Promise((resolve, reject) => {
      this.pending.set(id, resolve);
      try {
        this.socket.send(payload);
      } catch (err) {
        this.pending.delete(id);
        reject(err);
      }
    });
  }

  // fire-and-forget with an idempotency key: safe to send twice, the service
  // deduplicates; used for corrections where latency beats confirmation
  sendCorrection(
    session: string,
    kind: CorrectionKind,
    value: number[],
    key: string,
  ): void {
    const id = this.nextId++;
    this.pending.set(id, () => undefined);
    this.socket.send(
      JSON.stringify({ id, type: "correction", session, kind, value, key }),
    );
  }
}
