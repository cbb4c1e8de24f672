// Gamepad/keyboard mapping for live corrections. The keyboard fallback
// mirrors the gamepad so the correction mechanism is testable without
// hardware: left stick / arrow keys move the attractor in the plane, the
// right stick vertical / W,S move the height, bumpers / Q,A step the scaling
// factor, E,D step the gripper, and the held safety key (right trigger /
// space) is a dead-man switch whose release stops the round.

import type { CorrectionKind } from "./protocol.js";

export const DEADZONE = 0.05;

export interface InputSnapshot {
  leftStick: [number, number];   // x right+, y forward+ in [-1, 1]
  rightStickY: number;           // height axis in [-1, 1]
  scalingUp: boolean;
  scalingDown: boolean;
  gripperEarlier: boolean;
  gripperLater: boolean;
  safetyHeld: boolean;
  gotoStart: boolean;
}

export const IDLE_SNAPSHOT: InputSnapshot = {
  leftStick: [0, 0],
  rightStickY: 0,
  scalingUp: false,
  scalingDown: false,
  gripperEarlier: false,
  gripperLater: false,
  safetyHeld: false,
  gotoStart: false,
};

export interface CorrectionIntent {
  kind: CorrectionKind;
  value: number[];
}

export function applyDeadzone(value: number, deadzone = DEADZONE): number {
  if (Math.abs(value) < deadzone) return 0;
  const sign = Math.sign(value);
  // rescale so full deflection still reaches 1
  return sign * Math.min((Math.abs(value) - deadzone) / (1 - deadzone), 1);
}

export class InputMapper {
  private previous: InputSnapshot = IDLE_SNAPSHOT;
  private safetyEngaged = false;

  // Maps one polled snapshot to correction intents. Continuous sticks emit
  // every call while deflected; discrete buttons emit one increment per
  // press edge; releasing the safety key emits a stop with priority.
  map(snapshot: InputSnapshot): CorrectionIntent[] {
    const intents: CorrectionIntent[] = [];
    if (this.safetyEngaged && !snapshot.safetyHeld) {
      this.safetyEngaged = false;
      this.previous = snapshot;
      return [{ kind: "stop", value: [] }];
    }
    if (snapshot.safetyHeld) this.safetyEngaged = true;

    const [sx, sy] = snapshot.leftStick.map((v) => applyDeadzone(v));
    if (sx !== 0 || sy !== 0) {
      intents.push({ kind: "attractor_xy", value: [sx, sy] });
    }
    const sz = applyDeadzone(snapshot.rightStickY);
    if (sz !== 0) {
      intents.push({ kind: "attractor_z", value: [sz] });
    }
    if (snapshot.scalingUp && !this.previous.scalingUp) {
      intents.push({ kind: "scaling_increment", value: [1] });
    }
    if (snapshot.scalingDown && !this.previous.scalingDown) {
      intents.push({ kind: "scaling_increment", value: [-1] });
    }
    if (snapshot.gripperEarlier && !this.previous.gripperEarlier) {
      intents.push({ kind: "gripper_increment", value: [1] });
    }
    if (snapshot.gripperLater && !this.previous.gripperLater) {
      intents.push({ kind: "gripper_increment", value: [-1] });
    }
    if (snapshot.gotoStart && !this.previous.gotoStart) {
      intents.push({ kind: "goto_start", value: [] });
    }
    this.previous = snapshot;
    return intents;
  }

  reset(): void {
    this.previous = IDLE_SNAPSHOT;
    this.safetyEngaged = false;
  }
}

const KEY_BINDINGS: Record<string, keyof InputSnapshot | "left" | "right" | "up" | "down"> = {
  ArrowLeft: "left",
  ArrowRight: "right",
  ArrowUp: "up",
  ArrowDown: "down",
  w: "rightStickY",
  s: "rightStickY",
  q: "scalingUp",
  a: "scalingDown",
  e: "gripperEarlier",
  d: "gripperLater",
  " ": "safetyHeld",
  g: "gotoStart",
};

// Keyboard state tracker producing the same snapshots as a gamepad poll.
export class KeyboardSource {
  private held = new Set<string>();

  keyDown(key: string): void {
    if (key in KEY_BINDINGS) this.held.add(key);
  }

  keyUp(key: string): void {
    this.held.delete(key);
  }

  snapshot(): InputSnapshot {
    const stickX = (this.held.has("ArrowRight") ? 1 : 0) - (this.held.has("ArrowLeft") ? 1 : 0);
    const stickY = (this.held.has("ArrowUp") ? 1 : 0) - (this.held.has("ArrowDown") ? 1 : 0);
    const height = (this.held.has("w") ? 1 : 0) - (this.held.has("s") ? 1 : 0);
    return {
      leftStick: [stickX, stickY],
      rightStickY: height,
      scalingUp: this.held.has("q"),
      scalingDown: this.held.has("a"),
      gripperEarlier: this.held.has("e"),
      gripperLater: this.held.has("d"),
      safetyHeld: this.held.has(" "),
      gotoStart: this.held.has("g"),
    };
  }
}

// Standard-layout gamepad poll (left stick axes 0/1, right stick vertical 3,
// bumpers 4/5, face buttons 2/3 for the gripper, right trigger 7 as safety).
export function gamepadSnapshot(pad: {
  axes: ReadonlyArray<number>;
  buttons: ReadonlyArray<{ pressed: boolean; value: number }>;
}): InputSnapshot {
  return {
    leftStick: [pad.axes[0] ?? 0, -(pad.axes[1] ?? 0)],
    rightStickY: -(pad.axes[3] ?? 0),
    scalingUp: pad.buttons[5]?.pressed ?? false,
    scalingDown: pad.buttons[4]?.pressed ?? false,
    gripperEarlier: pad.buttons[3]?.pressed ?? false,
    gripperLater: pad.buttons[2]?.pressed ?? false,
    safetyHeld: (pad.buttons[7]?.value ?? 0) > 0.5,
    gotoStart: pad.buttons[9]?.pressed ?? false,
  };
}
