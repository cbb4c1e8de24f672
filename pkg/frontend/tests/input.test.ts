import { describe, expect, it } from "vitest";

import { applyDeadzone, IDLE_SNAPSHOT, InputMapper, KeyboardSource } from "../src/input.js";

const snap = (overrides: Partial<typeof IDLE_SNAPSHOT>) => ({
  ...IDLE_SNAPSHOT,
  ...overrides,
});

describe("deadzone", () => {
  it("zeroes small deflections and preserves full scale", () => {
    expect(applyDeadzone(0.03)).toBe(0);
    expect(applyDeadzone(-0.04)).toBe(0);
    expect(applyDeadzone(1)).toBe(1);
    expect(applyDeadzone(-1)).toBe(-1);
    expect(applyDeadzone(0.5)).toBeCloseTo(0.4737, 3);
  });
});

describe("InputMapper", () => {
  it("holds sticks emit every poll, buttons emit on edges", () => {
    const mapper = new InputMapper();
    const held = snap({ leftStick: [0.5, 0], scalingUp: true });
    const first = mapper.map(held);
    expect(first.map((i) => i.kind)).toEqual(["attractor_xy", "scaling_increment"]);
    const second = mapper.map(held);
    expect(second.map((i) => i.kind)).toEqual(["attractor_xy"]); // button already down
    const released = mapper.map(snap({}));
    expect(released).toEqual([]);
    const pressedAgain = mapper.map(snap({ scalingUp: true }));
    expect(pressedAgain.map((i) => i.kind)).toEqual(["scaling_increment"]);
  });

  it("half deflection maps to a scaled value", () => {
    const mapper = new InputMapper();
    const [intent] = mapper.map(snap({ leftStick: [0.5, 0] }));
    expect(intent.kind).toBe("attractor_xy");
    expect(intent.value[0]).toBeGreaterThan(0.4);
    expect(intent.value[0]).toBeLessThanOrEqual(0.5);
  });

  it("safety release emits exactly one stop with priority", () => {
    const mapper = new InputMapper();
    mapper.map(snap({ safetyHeld: true, leftStick: [1, 0] }));
    const onRelease = mapper.map(snap({ leftStick: [1, 0] }));
    expect(onRelease).toEqual([{ kind: "stop", value: [] }]);
    // nothing further once released
    expect(mapper.map(snap({}))).toEqual([]);
  });

  it("gripper increments are signed per key", () => {
    const mapper = new InputMapper();
    const out = mapper.map(snap({ gripperEarlier: true }));
    expect(out).toEqual([{ kind: "gripper_increment", value: [1] }]);
    const out2 = mapper.map(snap({ gripperLater: true }));
    expect(out2).toEqual([{ kind: "gripper_increment", value: [-1] }]);
  });
});

describe("KeyboardSource", () => {
  it("mirrors the gamepad mapping", () => {
    const kb = new KeyboardSource();
    kb.keyDown("ArrowUp");
    kb.keyDown("q");
    kb.keyDown(" ");
    const s = kb.snapshot();
    expect(s.leftStick).toEqual([0, 1]);
    expect(s.scalingUp).toBe(true);
    expect(s.safetyHeld).toBe(true);
    kb.keyUp(" ");
    expect(kb.snapshot().safetyHeld).toBe(false);
  });
});
