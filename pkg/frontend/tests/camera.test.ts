import { readFileSync } from "node:fs";
import { join } from "node:path";
import { describe, expect, it } from "vitest";

import {
  cameraFromJson, cameraToJson, center, clampElevation, clampRadius,
  lookAtPose, orbitCamera, orbitEye, projMatrix, projectPoint, viewMatrix,
} from "../src/camera.js";
import type { ViewerState } from "../src/types.js";

const FIX = join(__dirname, "fixtures");
const golden = JSON.parse(readFileSync(join(FIX, "goldens.json"), "utf8"));

function bundleCam(i: number) {
  return cameraFromJson(JSON.parse(readFileSync(
    join(FIX, "bundle", "views", `00${i}.json`), "utf8")));
}

describe("projection", () => {
  it("matches the service's projection on golden points", () => {
    for (const gc of golden.project.cameras) {
      const cam = bundleCam(gc.view);
      golden.project.points.forEach((p: number[], k: number) => {
        const [u, v, z, valid] = projectPoint(cam, p);
        expect(u).toBeCloseTo(gc.uv[k][0], 9);
        expect(v).toBeCloseTo(gc.uv[k][1], 9);
        expect(z).toBeCloseTo(gc.z[k], 9);
        expect(valid).toBe(gc.valid[k]);
      });
    }
  });

  it("camera JSON round-trips", () => {
    const cam = bundleCam(0);
    const again = cameraFromJson(JSON.parse(cameraToJson(cam)));
    // JSON.stringify folds -0 to 0; normalize before comparing
    const z = (a: number[]) => a.map((v) => (v === 0 ? 0 : v));
    expect(z(again.pose)).toEqual(z(cam.pose));
    expect(z(again.K)).toEqual(z(cam.K));
  });

  it("rejects malformed camera JSON", () => {
    expect(() => cameraFromJson({ intrinsics: [1, 2], pose: [], width: 4, height: 4 } as any))
      .toThrow(/intrinsics/);
    expect(() => cameraFromJson({ intrinsics: new Array(9).fill(1), pose: [1], width: 4, height: 4 } as any))
      .toThrow(/pose/);
  });
});

describe("orbit controls", () => {
  const state: ViewerState = {
    azimuth: 0.3, elevation: 0.2, radius: 2.0, target: [0.5, -0.25, 1.0],
    mode: "rgb", fps: 0, parity: false,
  };

  it("elevation clamps inside the open interval", () => {
    expect(clampElevation(2.0)).toBeLessThan(Math.PI / 2);
    expect(clampElevation(-2.0)).toBeGreaterThan(-Math.PI / 2);
    expect(clampElevation(0.1)).toBe(0.1);
    expect(clampRadius(-1)).toBeGreaterThan(0);
  });

  it("eye sits at radius from the target", () => {
    const eye = orbitEye(state);
    const d = Math.hypot(eye[0] - state.target[0], eye[1] - state.target[1],
                         eye[2] - state.target[2]);
    expect(d).toBeCloseTo(state.radius, 12);
  });

  it("azimuth increases monotonically along the orbit", () => {
    const a1 = { ...state, azimuth: 0.0 };
    const a2 = { ...state, azimuth: 0.4 };
    const e1 = orbitEye(a1);
    const e2 = orbitEye(a2);
    const ang = (e: number[]) => Math.atan2(e[1] - state.target[1], e[0] - state.target[0]);
    expect(ang(e2)).toBeGreaterThan(ang(e1));
  });

  it("look-at pose is rigid and faces the target", () => {
    const pose = lookAtPose([2, 1, 3], [0, 0, 0]);
    // columns: right, down, forward
    const col = (j: number) => [pose[j], pose[4 + j], pose[8 + j]];
    for (let j = 0; j < 3; j++) {
      const c = col(j);
      expect(Math.hypot(c[0], c[1], c[2])).toBeCloseTo(1, 12);
    }
    const dot = (a: number[], b: number[]) => a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    expect(dot(col(0), col(1))).toBeCloseTo(0, 12);
    expect(dot(col(0), col(2))).toBeCloseTo(0, 12);
    const fwd = col(2);
    const toT = [-2, -1, -3].map((v) => v / Math.hypot(2, 1, 3));
    expect(dot(fwd, toT)).toBeCloseTo(1, 9);
  });

  it("orbit camera projects its own target to the principal point", () => {
    const cam = orbitCamera(state, bundleCam(0).K, 16, 16);
    const [u, v, z] = projectPoint(cam, state.target);
    expect(u).toBeCloseTo(cam.K[2], 9);
    expect(v).toBeCloseTo(cam.K[5], 9);
    expect(z).toBeCloseTo(state.radius, 12);
    expect(center(cam)).toEqual(orbitEye(state));
  });
});

describe("GL matrices", () => {
  it("view matrix maps world points to camera coords", () => {
    const cam = bundleCam(1);
    const m = viewMatrix(cam);
    const p = golden.project.points[0];
    // column-major multiply
    const cx = m[0] * p[0] + m[4] * p[1] + m[8] * p[2] + m[12];
    const cy = m[1] * p[0] + m[5] * p[1] + m[9] * p[2] + m[13];
    const cz = m[2] * p[0] + m[6] * p[1] + m[10] * p[2] + m[14];
    const [u, v, z] = projectPoint(cam, p);
    // f32 uniforms: tolerate single precision
    expect(cz).toBeCloseTo(z, 5);
    expect(cam.K[0] * cx / cz + cam.K[2]).toBeCloseTo(u, 3);
    expect(cam.K[4] * cy / cz + cam.K[5]).toBeCloseTo(v, 3);
  });

  it("projection matrix lands pixel centers on the pinhole projection", () => {
    const cam = bundleCam(2);
    const near = 0.05, far = 10.0;
    const mp = projMatrix(cam, near, far);
    const mv = viewMatrix(cam);
    const p = golden.project.points[5]; // bbox center, safely in front
    const cx = mv[0] * p[0] + mv[4] * p[1] + mv[8] * p[2] + mv[12];
    const cy = mv[1] * p[0] + mv[5] * p[1] + mv[9] * p[2] + mv[13];
    const cz = mv[2] * p[0] + mv[6] * p[1] + mv[10] * p[2] + mv[14];
    const clipX = mp[0] * cx + mp[8] * cz;
    const clipY = mp[5] * cy + mp[9] * cz;
    const clipW = cz;
    const ndcX = clipX / clipW, ndcY = clipY / clipW;
    // image coords: u = (ndc+1)/2 * W - 0.5, y flipped
    const u = (ndcX + 1) * 0.5 * cam.width - 0.5;
    const v = (1 - ndcY) * 0.5 * cam.height - 0.5;
    const [gu, gv] = projectPoint(cam, p);
    expect(u).toBeCloseTo(gu, 6);
    expect(v).toBeCloseTo(gv, 6);
  });

  it("depth range maps near/far to -1/+1", () => {
    const cam = bundleCam(0);
    const near = 0.1, far = 5.0;
    const m = projMatrix(cam, near, far);
    const ndcAt = (z: number) => (m[10] * z + m[14]) / z;
    expect(ndcAt(near)).toBeCloseTo(-1, 6);
    expect(ndcAt(far)).toBeCloseTo(1, 6);
  });
});
