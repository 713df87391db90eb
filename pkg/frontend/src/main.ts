/** Browser entry: orbit controls, mode buttons, parity readout. */

import { BundleClient, loadBundle } from "./client.js";
import { clampElevation, clampRadius } from "./camera.js";
import { Viewer } from "./viewer.js";
import type { RenderMode, ViewerState } from "./types.js";

const $ = (id: string) => document.getElementById(id)!;

function banner(msg: string, retry?: () => void) {
  const el = $("banner");
  el.textContent = msg;
  el.style.display = "block";
  if (retry) {
    const b = document.createElement("button");
    b.textContent = "retry";
    b.onclick = () => { el.style.display = "none"; retry(); };
    el.appendChild(b);
  }
}

async function boot() {
  const params = new URLSearchParams(location.search);
  const base = params.get("service") ?? "http://127.0.0.1:8790";
  const client = new BundleClient(base);
  const canvas = $("view") as HTMLCanvasElement;

  let res;
  try {
    res = await loadBundle(client);
  } catch (e: any) {
    banner(`load failed: ${e.message}`, () => boot());
    return;
  }
  $("stats").textContent =
    `${res.mesh.vertexCount} vertices, ${res.mesh.faceCount} faces, ${res.meta.n_views} views`;

  const viewer = new Viewer(canvas);
  await viewer.upload(res);

  const [lo, hi] = res.meta.bbox;
  const target: [number, number, number] = [
    (lo[0] + hi[0]) / 2, (lo[1] + hi[1]) / 2, (lo[2] + hi[2]) / 2];
  const state: ViewerState = {
    azimuth: 0.6,
    elevation: 0.4,
    radius: 2.5 * Math.hypot(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]) / 2,
    target,
    mode: "rgb",
    fps: 0,
    parity: false,
  };

  // pointer orbit: x drag -> azimuth (monotone), y drag -> elevation
  let dragging = false;
  let px = 0, py = 0;
  canvas.addEventListener("pointerdown", (e) => {
    dragging = true; px = e.clientX; py = e.clientY;
    canvas.setPointerCapture(e.pointerId);
  });
  canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    state.azimuth += (e.clientX - px) * 0.01;
    state.elevation = clampElevation(state.elevation + (e.clientY - py) * 0.01);
    px = e.clientX; py = e.clientY;
  });
  canvas.addEventListener("pointerup", () => { dragging = false; });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    state.radius = clampRadius(state.radius * Math.exp(e.deltaY * 1e-3));
  }, { passive: false });

  for (const mode of ["rgb", "depth", "weights", "lifted", "sigma"] as RenderMode[]) {
    const b = document.createElement("button");
    b.textContent = mode;
    b.onclick = () => { state.mode = mode; };
    $("modes").appendChild(b);
  }
  ($("parity") as HTMLButtonElement).onclick = async () => {
    try {
      const cam = viewer.stateCamera(state);
      const med = await viewer.parityCheck(client, cam);
      $("parityOut").textContent =
        `median |client - server| = ${med.toFixed(2)} / 255 ${med <= 2 ? "(ok)" : "(FAIL)"}`;
    } catch (e: any) {
      banner(`parity failed: ${e.message}`);
    }
  };

  const loop = () => {
    viewer.renderFrame(state);
    state.fps = viewer.fps;
    $("fps").textContent = `${viewer.fps.toFixed(1)} fps`;
    requestAnimationFrame(loop);
  };
  requestAnimationFrame(loop);
}

boot();
