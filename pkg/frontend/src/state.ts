/** Viewer state and fly-camera kinematics.
 *
 * Camera frame: +z forward, +x right, +y down (matches the render
 * service's pinhole convention; world up is -y in camera terms). WASD
 * translates in the camera frame, mouse drag yaws about the world up axis
 * and pitches about the camera x axis, and the position is clamped inside
 * the service-reported bounds sphere.
 */

import {
  Quat,
  QUAT_IDENTITY,
  Vec3,
  quatFromAxisAngle,
  quatMultiply,
  quatNormalize,
  quatRotate,
  vecAdd,
  vecNorm,
  vecScale,
} from "./math.js";

export type DisplayMode = "color" | "inv_depth" | "acc";

export interface ViewerState {
  position: Vec3;
  orientation: Quat;
  moveSpeed: number; // m/s
  mode: DisplayMode;
  fovDeg: number;
  boundsRadius: number; // from /meta; Infinity until connected
  pendingRequest: boolean;
}

export interface InputFrame {
  /** Currently held movement keys (lowercase). */
  keys: Set<string>;
  /** Accumulated mouse drag in pixels since the last frame. */
  dragDx: number;
  dragDy: number;
}

export const YAW_PER_PIXEL = 0.005; // rad
export const PITCH_PER_PIXEL = 0.005; // rad
const WORLD_UP: Vec3 = [0, 1, 0];
/** Stay strictly inside the reconstruction volume, the boundary itself is invalid. */
const BOUNDS_MARGIN = 0.999;

export function initialState(): ViewerState {
  return {
    position: [0, 0, 0],
    orientation: QUAT_IDENTITY,
    moveSpeed: 1.0,
    mode: "color",
    fovDeg: 90,
    boundsRadius: Infinity,
    pendingRequest: false,
  };
}

function moveDirection(keys: Set<string>): Vec3 {
  let x = 0;
  let y = 0;
  let z = 0;
  if (keys.has("w")) z += 1;
  if (keys.has("s")) z -= 1;
  if (keys.has("d")) x += 1;
  if (keys.has("a")) x -= 1;
  if (keys.has("f")) y += 1; // down (camera +y)
  if (keys.has("r")) y -= 1; // up
  const n = Math.hypot(x, y, z);
  return n > 0 ? [x / n, y / n, z / n] : [0, 0, 0];
}

export function clampToBounds(position: Vec3, radius: number): Vec3 {
  const limit = radius * BOUNDS_MARGIN;
  const n = vecNorm(position);
  if (!isFinite(limit) || n <= limit) return position;
  return vecScale(position, limit / n);
}

/** Advance the pose by one input frame over dt seconds. */
export function handleInput(state: ViewerState, input: InputFrame, dt: number): ViewerState {
  let orientation = state.orientation;
  if (input.dragDx !== 0) {
    const yaw = quatFromAxisAngle(WORLD_UP, -input.dragDx * YAW_PER_PIXEL);
    orientation = quatMultiply(yaw, orientation);
  }
  if (input.dragDy !== 0) {
    const pitch = quatFromAxisAngle([1, 0, 0], input.dragDy * PITCH_PER_PIXEL);
    orientation = quatMultiply(orientation, pitch);
  }
  orientation = quatNormalize(orientation);

  const local = moveDirection(input.keys);
  let position = state.position;
  if (local[0] !== 0 || local[1] !== 0 || local[2] !== 0) {
    const world = quatRotate(orientation, local);
    position = vecAdd(position, vecScale(world, state.moveSpeed * dt));
  }
  position = clampToBounds(position, state.boundsRadius);
  return { ...state, position, orientation };
}

export function poseParam(state: ViewerState): string {
  const [px, py, pz] = state.position;
  const [qw, qx, qy, qz] = state.orientation;
  return [px, py, pz, qw, qx, qy, qz].map((v) => v.toPrecision(8)).join(",");
}
