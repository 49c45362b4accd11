/**
 * Orbit-camera state and pose math for the render service.
 *
 * Pose convention (matching the service): camera space has +x right,
 * +y down, +z forward; `camera_to_world` is a row-major 4x4 whose rotation
 * columns are the camera axes expressed in world coordinates.  World up is
 * +y.  Azimuth 0 / elevation 0 / distance d places the camera at
 * target + (0, 0, d) looking down world -z.
 */

export interface OrbitState {
  target: [number, number, number];
  /** degrees, rotation about the world up axis */
  azimuth: number;
  /** degrees, positive raises the camera; clamped to (-90, 90) */
  elevation: number;
  distance: number;
}

export interface ViewerState {
  orbit: OrbitState;
  /** rendered image size in pixels (square) */
  resolution: number;
  /** vertical field of view in degrees */
  fov: number;
  /** supersampling factor sent with each request */
  gamma: number;
  lightingA: number;
  lightingB: number;
  /** lighting interpolation weight in [0, 1) */
  tau: number;
  /** whether the model exposes lighting embeddings at all */
  lightingEnabled: boolean;
  appearanceId: number;
}

export const MAX_ELEVATION_DEG = 89.9;
const MIN_DISTANCE = 1e-6;
const DEG = Math.PI / 180;

export function clampOrbit(s: OrbitState): OrbitState {
  return {
    target: [...s.target],
    azimuth: s.azimuth,
    elevation: Math.min(MAX_ELEVATION_DEG, Math.max(-MAX_ELEVATION_DEG, s.elevation)),
    distance: Math.max(MIN_DISTANCE, s.distance),
  };
}

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  return [a[0] / n, a[1] / n, a[2] / n];
}

/**
 * Build the row-major 4x4 camera_to_world matrix (as 16 numbers) for an
 * orbit state.  Inputs are clamped rather than rejected.
 */
export function poseFromOrbit(state: OrbitState): number[] {
  const s = clampOrbit(state);
  const az = s.azimuth * DEG;
  const el = s.elevation * DEG;
  const offset: Vec3 = [
    s.distance * Math.cos(el) * Math.sin(az),
    s.distance * Math.sin(el),
    s.distance * Math.cos(el) * Math.cos(az),
  ];
  const position: Vec3 = [
    s.target[0] + offset[0],
    s.target[1] + offset[1],
    s.target[2] + offset[2],
  ];
  const forward = normalize(sub(s.target, position));
  const worldUp: Vec3 = [0, 1, 0];
  const right = normalize(cross(forward, worldUp));
  const down = cross(forward, right);
  // rotation columns are the camera axes (right, down, forward) in world space
  return [
    right[0], down[0], forward[0], position[0],
    right[1], down[1], forward[1], position[1],
    right[2], down[2], forward[2], position[2],
    0, 0, 0, 1,
  ];
}

/**
 * Recover azimuth/elevation/distance from a pose produced by poseFromOrbit,
 * given the orbit target.  Inverse of poseFromOrbit up to angle wrapping.
 */
export function decomposeOrbit(
  pose: number[], target: Vec3,
): { azimuth: number; elevation: number; distance: number } {
  const position: Vec3 = [pose[3], pose[7], pose[11]];
  const offset = sub(position, target);
  const distance = norm(offset);
  const elevation = Math.asin(offset[1] / distance) / DEG;
  const azimuth = Math.atan2(offset[0], offset[2]) / DEG;
  return { azimuth, elevation, distance };
}

/** Maximum absolute deviation of R R^T from the identity. */
export function orthonormalityError(pose: number[]): number {
  const r = (i: number, j: number) => pose[i * 4 + j];
  let worst = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let dot = 0;
      for (let k = 0; k < 3; k++) dot += r(i, k) * r(j, k);
      worst = Math.max(worst, Math.abs(dot - (i === j ? 1 : 0)));
    }
  }
  return worst;
}
