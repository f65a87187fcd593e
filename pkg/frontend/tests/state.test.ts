import { describe, expect, it } from "vitest";

import { QUAT_IDENTITY, quatDistance, quatRotate, vecNorm } from "../src/math.js";
import { YAW_PER_PIXEL, clampToBounds, handleInput, initialState, poseParam } from "../src/state.js";

function frame(keys: string[] = [], dragDx = 0, dragDy = 0) {
  return { keys: new Set(keys), dragDx, dragDy };
}

describe("fly-camera kinematics", () => {
  it("moves 1 m along the view axis after 1 s of forward at 1 m/s", () => {
    let state = initialState();
    state.moveSpeed = 1.0;
    const steps = 60;
    for (let i = 0; i < steps; i++) {
      state = handleInput(state, frame(["w"]), 1 / steps);
    }
    expect(state.position[2]).toBeCloseTo(1.0, 9);
    expect(Math.abs(state.position[0])).toBeLessThan(1e-12);
    expect(Math.abs(state.position[1])).toBeLessThan(1e-12);
  });

  it("moves along the rotated view axis after a yaw", () => {
    let state = initialState();
    // yaw a quarter turn, then push forward
    state = handleInput(state, frame([], (Math.PI / 2) / YAW_PER_PIXEL), 0.016);
    for (let i = 0; i < 50; i++) {
      state = handleInput(state, frame(["w"]), 0.02);
    }
    const forward = quatRotate(state.orientation, [0, 0, 1]);
    const along =
      state.position[0] * forward[0] +
      state.position[1] * forward[1] +
      state.position[2] * forward[2];
    expect(along).toBeCloseTo(vecNorm(state.position), 9);
    expect(vecNorm(state.position)).toBeCloseTo(1.0, 9);
  });

  it("clamps attempts to leave the bounds sphere", () => {
    let state = initialState();
    state.boundsRadius = 0.5;
    for (let i = 0; i < 300; i++) {
      state = handleInput(state, frame(["w"]), 0.05);
    }
    expect(vecNorm(state.position)).toBeLessThanOrEqual(0.5);
    expect(vecNorm(state.position)).toBeGreaterThan(0.49);
  });

  it("clampToBounds leaves interior positions untouched", () => {
    expect(clampToBounds([0.1, 0.2, -0.1], 1.0)).toEqual([0.1, 0.2, -0.1]);
  });

  it("returns to the start orientation after 360 degrees of accumulated yaw", () => {
    let state = initialState();
    const steps = 720;
    const pixels = (2 * Math.PI) / YAW_PER_PIXEL / steps;
    for (let i = 0; i < steps; i++) {
      state = handleInput(state, frame([], pixels), 0.016);
    }
    expect(quatDistance(state.orientation, QUAT_IDENTITY)).toBeLessThan(1e-3);
  });

  it("keeps the orientation normalized through mixed input", () => {
    let state = initialState();
    for (let i = 0; i < 500; i++) {
      state = handleInput(state, frame(["w", "d"], 3.7, -2.1), 0.016);
    }
    const [w, x, y, z] = state.orientation;
    expect(Math.hypot(w, x, y, z)).toBeCloseTo(1.0, 12);
  });

  it("formats the pose parameter with 7 components", () => {
    const state = initialState();
    const parts = poseParam(state).split(",");
    expect(parts).toHaveLength(7);
    expect(Number(parts[3])).toBeCloseTo(1.0, 9);
  });
});
