/**
 * Pinhole cameras and the orbit control model.
 *
 * Conventions follow the rendering service: camera frame x right,
 * y down, z forward; pose is a rigid world-from-camera 4x4; pixel
 * centers sit at integer coordinates; projection is
 * u = fx x/z + cx, v = fy y/z + cy with valid z > 0 and
 * 0 <= u <= W-1, 0 <= v <= H-1.
 */

import type { CameraJson, ViewerState } from "./types.js";

export interface Cam {
  K: number[];     // 9 row-major
  pose: number[];  // 16 row-major world-from-camera
  width: number;
  height: number;
}

export function cameraFromJson(j: CameraJson): Cam {
  if (!j.intrinsics || j.intrinsics.length !== 9) {
    throw new Error("camera: intrinsics must have 9 entries");
  }
  if (!j.pose || j.pose.length !== 16) {
    throw new Error("camera: pose must have 16 entries");
  }
  return { K: j.intrinsics, pose: j.pose, width: j.width, height: j.height };
}

export function cameraToJson(c: Cam): string {
  // alphabetical keys to match the service's canonical serialization
  return JSON.stringify({
    height: c.height,
    intrinsics: c.K,
    pose: c.pose,
    width: c.width,
  });
}

export function center(c: Cam): [number, number, number] {
  return [c.pose[3], c.pose[7], c.pose[11]];
}

/** world point -> [u, v, zCam, valid] */
export function projectPoint(c: Cam, p: [number, number, number] | number[]):
    [number, number, number, boolean] {
  const t = center(c);
  const rx = p[0] - t[0], ry = p[1] - t[1], rz = p[2] - t[2];
  const P = c.pose;
  // cam = R^T (p - t), R = pose[:3,:3] row-major
  const x = P[0] * rx + P[4] * ry + P[8] * rz;
  const y = P[1] * rx + P[5] * ry + P[9] * rz;
  const z = P[2] * rx + P[6] * ry + P[10] * rz;
  const front = z > 0;
  const sz = front ? z : 1.0;
  const u = c.K[0] * (x / sz) + c.K[2];
  const v = c.K[4] * (y / sz) + c.K[5];
  const valid = front && u >= 0 && u <= c.width - 1 && v >= 0 && v <= c.height - 1;
  return [u, v, z, valid];
}

const EL_LIMIT = Math.PI / 2 - 1e-3;

export function clampElevation(el: number): number {
  return Math.min(EL_LIMIT, Math.max(-EL_LIMIT, el));
}

export function clampRadius(r: number, minR = 1e-3): number {
  return Math.max(r, minR);
}

/** Orbit state -> eye position (world up +z). */
export function orbitEye(s: ViewerState): [number, number, number] {
  const ce = Math.cos(s.elevation);
  return [
    s.target[0] + s.radius * ce * Math.cos(s.azimuth),
    s.target[1] + s.radius * ce * Math.sin(s.azimuth),
    s.target[2] + s.radius * Math.sin(s.elevation),
  ];
}

/** Same look-at construction the dataset cameras use. */
export function lookAtPose(eye: number[], target: number[],
                           up: number[] = [0, 0, 1]): number[] {
  let fx = target[0] - eye[0], fy = target[1] - eye[1], fz = target[2] - eye[2];
  const fn = Math.hypot(fx, fy, fz);
  fx /= fn; fy /= fn; fz /= fn;
  let ux = up[0], uy = up[1], uz = up[2];
  const un = Math.hypot(ux, uy, uz);
  if (Math.abs((fx * ux + fy * uy + fz * uz) / un) > 0.999) {
    ux = 0; uy = 1; uz = 0;
  }
  // right = fwd x up, down = fwd x right
  let rx = fy * uz - fz * uy, ry = fz * ux - fx * uz, rz = fx * uy - fy * ux;
  const rn = Math.hypot(rx, ry, rz);
  rx /= rn; ry /= rn; rz /= rn;
  const dx = fy * rz - fz * ry, dy = fz * rx - fx * rz, dz = fx * ry - fy * rx;
  return [
    rx, dx, fx, eye[0],
    ry, dy, fy, eye[1],
    rz, dz, fz, eye[2],
    0, 0, 0, 1,
  ];
}

export function orbitCamera(s: ViewerState, K: number[], width: number,
                            height: number): Cam {
  const eye = orbitEye(s);
  return { K, pose: lookAtPose(eye, s.target), width, height };
}

/** column-major 4x4 world->camera matrix for GL uniforms */
export function viewMatrix(c: Cam): Float32Array {
  const P = c.pose;
  const t = center(c);
  // R^T rows become the upper 3x3; translation -R^T t
  const m = new Float32Array(16);
  // column-major: m[col*4+row]
  m[0] = P[0]; m[4] = P[4]; m[8] = P[8];
  m[1] = P[1]; m[5] = P[5]; m[9] = P[9];
  m[2] = P[2]; m[6] = P[6]; m[10] = P[10];
  m[12] = -(P[0] * t[0] + P[4] * t[1] + P[8] * t[2]);
  m[13] = -(P[1] * t[0] + P[5] * t[1] + P[9] * t[2]);
  m[14] = -(P[2] * t[0] + P[6] * t[1] + P[10] * t[2]);
  m[15] = 1;
  return m;
}

/**
 * Pinhole -> GL clip matrix (column-major). Maps camera coords to the
 * viewport so rasterized pixel centers line up with the service's
 * integer-coordinate convention; y flips because GL NDC y is up.
 */
export function projMatrix(c: Cam, near: number, far: number): Float32Array {
  const W = c.width, H = c.height;
  const fx = c.K[0], fy = c.K[4], cx = c.K[2], cy = c.K[5];
  const m = new Float32Array(16);
  m[0] = 2 * fx / W;
  m[5] = -2 * fy / H;
  m[8] = 2 * (cx + 0.5) / W - 1;
  m[9] = -(2 * (cy + 0.5) / H - 1);
  m[10] = (far + near) / (far - near);
  m[11] = 1;
  m[14] = -2 * far * near / (far - near);
  return m;
}
