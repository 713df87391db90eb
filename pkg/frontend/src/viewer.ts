/**
 * WebGL2 viewer: uploads bundle resources once, then renders frames
 * from a ViewerState. Also drives parity mode (offscreen client frame
 * vs POST /render at the same camera).
 */

import { cameraToJson, projMatrix, viewMatrix, type Cam, orbitCamera } from "./camera.js";
import { packUniform } from "./manifest.js";
import { coverageMask, medianAbsDiff } from "./parity.js";
import { fragmentSrc, vertexSrc } from "./shaders.js";
import type { BundleClient, BundleResources } from "./client.js";
import type { RenderMode, ViewerState } from "./types.js";

const MODE_ID: Record<RenderMode, number> = {
  rgb: 0, depth: 1, weights: 2, lifted: 3, sigma: 4,
};

export class Viewer {
  gl: WebGL2RenderingContext;
  private prog!: WebGLProgram;
  private vao!: WebGLVertexArrayObject;
  private nIndices = 0;
  private res!: BundleResources;
  private loc: Record<string, WebGLUniformLocation | null> = {};
  private fbo: WebGLFramebuffer | null = null;
  private fboTex: WebGLTexture | null = null;
  private fboSize: [number, number] = [0, 0];
  private frames = 0;
  private lastT = 0;
  fps = 0;

  constructor(private canvas: HTMLCanvasElement) {
    const gl = canvas.getContext("webgl2", { antialias: false, preserveDrawingBuffer: true });
    if (!gl) throw new Error("WebGL2 not available");
    this.gl = gl;
  }

  async upload(res: BundleResources): Promise<void> {
    const gl = this.gl;
    this.res = res;
    const N = res.meta.n_views;
    const C = res.meta.feature_channels;

    const vs = this.compile(gl.VERTEX_SHADER, vertexSrc);
    const fs = this.compile(gl.FRAGMENT_SHADER, fragmentSrc(N, C, res.weights.width));
    const prog = gl.createProgram()!;
    gl.attachShader(prog, vs);
    gl.attachShader(prog, fs);
    gl.linkProgram(prog);
    if (!gl.getProgramParameter(prog, gl.LINK_STATUS)) {
      throw new Error("shader link failed: " + gl.getProgramInfoLog(prog));
    }
    this.prog = prog;
    gl.useProgram(prog);
    for (const name of ["uView", "uProj", "uEye", "uMode", "uNear", "uFar",
                        "uColor", "uFeat", "uProp", "uHasProp"]) {
      this.loc[name] = gl.getUniformLocation(prog, name);
    }

    // mesh buffers
    this.vao = gl.createVertexArray()!;
    gl.bindVertexArray(this.vao);
    const vbo = gl.createBuffer();
    gl.bindBuffer(gl.ARRAY_BUFFER, vbo);
    gl.bufferData(gl.ARRAY_BUFFER, res.mesh.vertices, gl.STATIC_DRAW);
    const stride = 24; // x y z nx ny nz f32
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 3, gl.FLOAT, false, stride, 0);
    gl.enableVertexAttribArray(1);
    gl.vertexAttribPointer(1, 3, gl.FLOAT, false, stride, 12);
    const ibo = gl.createBuffer();
    gl.bindBuffer(gl.ELEMENT_ARRAY_BUFFER, ibo);
    gl.bufferData(gl.ELEMENT_ARRAY_BUFFER, res.mesh.indices, gl.STATIC_DRAW);
    this.nIndices = res.mesh.indices.length;
    gl.bindVertexArray(null);

    // source colors: one RGBA8 array layer per view
    const W = res.cameras[0].width, H = res.cameras[0].height;
    const colorTex = gl.createTexture();
    gl.activeTexture(gl.TEXTURE0);
    gl.bindTexture(gl.TEXTURE_2D_ARRAY, colorTex);
    gl.texStorage3D(gl.TEXTURE_2D_ARRAY, 1, gl.RGBA8, W, H, N);
    for (let i = 0; i < N; i++) {
      const bmp = await createImageBitmap(new Blob([res.images[i]], { type: "image/png" }));
      gl.texSubImage3D(gl.TEXTURE_2D_ARRAY, 0, 0, 0, i, W, H, 1,
                       gl.RGBA, gl.UNSIGNED_BYTE, bmp);
      bmp.close();
    }
    this.nearest(gl.TEXTURE_2D_ARRAY);

    // features: planar f32 -> RGBA32F quads
    const quads = Math.ceil(C / 4);
    const featTex = gl.createTexture();
    gl.activeTexture(gl.TEXTURE1);
    gl.bindTexture(gl.TEXTURE_2D_ARRAY, featTex);
    gl.texStorage3D(gl.TEXTURE_2D_ARRAY, 1, gl.RGBA32F, W, H, N * quads);
    const plane = W * H;
    for (let i = 0; i < N; i++) {
      const raw = res.features[i];
      for (let q = 0; q < quads; q++) {
        const quad = new Float32Array(plane * 4);
        for (let c = 0; c < 4; c++) {
          const ch = q * 4 + c;
          if (ch >= C) break;
          for (let p = 0; p < plane; p++) quad[p * 4 + c] = raw.data[ch * plane + p] as number;
        }
        gl.texSubImage3D(gl.TEXTURE_2D_ARRAY, 0, 0, 0, i * quads + q, W, H, 1,
                         gl.RGBA, gl.FLOAT, quad);
      }
    }
    this.nearest(gl.TEXTURE_2D_ARRAY);

    // empty property texture placeholder (mode "lifted" needs setProperty)
    const propTex = gl.createTexture();
    gl.activeTexture(gl.TEXTURE2);
    gl.bindTexture(gl.TEXTURE_2D_ARRAY, propTex);
    gl.texStorage3D(gl.TEXTURE_2D_ARRAY, 1, gl.RGBA8, W, H, N);
    this.nearest(gl.TEXTURE_2D_ARRAY);

    gl.uniform1i(this.loc.uColor, 0);
    gl.uniform1i(this.loc.uFeat, 1);
    gl.uniform1i(this.loc.uProp, 2);
    gl.uniform1i(this.loc.uHasProp, 0);

    // per-view camera uniforms (static)
    for (let i = 0; i < N; i++) {
      const c = res.cameras[i];
      const P = c.pose;
      gl.uniform3f(gl.getUniformLocation(prog, `uSrcCenter[${i}]`),
                   P[3], P[7], P[11]);
      // column-major mat3 holding R^T
      gl.uniformMatrix3fv(gl.getUniformLocation(prog, `uSrcRot[${i}]`), false,
                          [P[0], P[1], P[2], P[4], P[5], P[6], P[8], P[9], P[10]]);
      gl.uniform4f(gl.getUniformLocation(prog, `uSrcK[${i}]`),
                   c.K[0], c.K[4], c.K[2], c.K[5]);
      gl.uniform2f(gl.getUniformLocation(prog, `uSrcSize[${i}]`), c.width, c.height);
    }

    // blend MLP weights in a uniform block
    const packed = packUniform(res.weights);
    const ubo = gl.createBuffer();
    gl.bindBuffer(gl.UNIFORM_BUFFER, ubo);
    gl.bufferData(gl.UNIFORM_BUFFER, packed.data, gl.STATIC_DRAW);
    const bi = gl.getUniformBlockIndex(prog, "Weights");
    gl.uniformBlockBinding(prog, bi, 0);
    gl.bindBufferBase(gl.UNIFORM_BUFFER, 0, ubo);

    gl.enable(gl.DEPTH_TEST);
    gl.clearColor(0, 0, 0, 0);
  }

  private nearest(target: number) {
    const gl = this.gl;
    gl.texParameteri(target, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
    gl.texParameteri(target, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
    gl.texParameteri(target, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
    gl.texParameteri(target, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
  }

  private compile(kind: number, src: string): WebGLShader {
    const gl = this.gl;
    const sh = gl.createShader(kind)!;
    gl.shaderSource(sh, src);
    gl.compileShader(sh);
    if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
      throw new Error("shader compile failed: " + gl.getShaderInfoLog(sh));
    }
    return sh;
  }

  stateCamera(state: ViewerState): Cam {
    const base = this.res.cameras[0];
    return orbitCamera(state, base.K, base.width, base.height);
  }

  private draw(cam: Cam, mode: RenderMode, w: number, h: number) {
    const gl = this.gl;
    gl.useProgram(this.prog);
    gl.viewport(0, 0, w, h);
    gl.clear(gl.COLOR_BUFFER_BIT | gl.DEPTH_BUFFER_BIT);
    gl.uniformMatrix4fv(this.loc.uView, false, viewMatrix(cam));
    gl.uniformMatrix4fv(this.loc.uProj, false,
                        projMatrix(cam, this.res.meta.near, this.res.meta.far));
    const P = cam.pose;
    gl.uniform3f(this.loc.uEye, P[3], P[7], P[11]);
    gl.uniform1i(this.loc.uMode, MODE_ID[mode]);
    gl.uniform1f(this.loc.uNear, this.res.meta.near);
    gl.uniform1f(this.loc.uFar, this.res.meta.far);
    gl.bindVertexArray(this.vao);
    gl.drawElements(gl.TRIANGLES, this.nIndices, gl.UNSIGNED_INT, 0);
    gl.bindVertexArray(null);
  }

  /** Render to the canvas and update the fps readout. */
  renderFrame(state: ViewerState): void {
    const cam = this.stateCamera(state);
    this.gl.bindFramebuffer(this.gl.FRAMEBUFFER, null);
    this.draw(cam, state.mode, this.canvas.width, this.canvas.height);
    const now = performance.now();
    this.frames += 1;
    if (now - this.lastT >= 500) {
      this.fps = (this.frames * 1000) / (now - this.lastT);
      this.frames = 0;
      this.lastT = now;
    }
  }

  /** Offscreen render at the camera's own resolution; returns RGBA bytes. */
  renderOffscreen(cam: Cam, mode: RenderMode): Uint8Array {
    const gl = this.gl;
    const [w, h] = [cam.width, cam.height];
    if (!this.fbo || this.fboSize[0] !== w || this.fboSize[1] !== h) {
      this.fbo = gl.createFramebuffer();
      this.fboTex = gl.createTexture();
      gl.bindTexture(gl.TEXTURE_2D, this.fboTex);
      gl.texStorage2D(gl.TEXTURE_2D, 1, gl.RGBA8, w, h);
      const depth = gl.createRenderbuffer();
      gl.bindRenderbuffer(gl.RENDERBUFFER, depth);
      gl.renderbufferStorage(gl.RENDERBUFFER, gl.DEPTH_COMPONENT16, w, h);
      gl.bindFramebuffer(gl.FRAMEBUFFER, this.fbo);
      gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0,
                              gl.TEXTURE_2D, this.fboTex, 0);
      gl.framebufferRenderbuffer(gl.FRAMEBUFFER, gl.DEPTH_ATTACHMENT,
                                 gl.RENDERBUFFER, depth);
      this.fboSize = [w, h];
    }
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.fbo);
    this.draw(cam, mode, w, h);
    const buf = new Uint8Array(w * h * 4);
    gl.readPixels(0, 0, w, h, gl.RGBA, gl.UNSIGNED_BYTE, buf);
    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
    // GL reads bottom-up; flip to image row order
    const flipped = new Uint8Array(buf.length);
    const row = w * 4;
    for (let y = 0; y < h; y++) {
      flipped.set(buf.subarray((h - 1 - y) * row, (h - y) * row), y * row);
    }
    return flipped;
  }

  /**
   * Parity check: client frame vs server frame at the same camera.
   * Returns median |diff| in u8 units over client-covered pixels.
   */
  async parityCheck(client: BundleClient, cam: Cam): Promise<number> {
    const clientFrame = this.renderOffscreen(cam, "rgb");
    const png = await client.renderServer(cameraToJson(cam));
    const bmp = await createImageBitmap(new Blob([png], { type: "image/png" }));
    const cv = new OffscreenCanvas(cam.width, cam.height);
    const ctx = cv.getContext("2d")!;
    ctx.drawImage(bmp, 0, 0);
    const server = ctx.getImageData(0, 0, cam.width, cam.height).data;
    bmp.close();
    const n = cam.width * cam.height;
    const cover = new Uint8Array(n);
    for (let p = 0; p < n; p++) cover[p] = clientFrame[p * 4 + 3] > 0 ? 1 : 0;
    return medianAbsDiff(clientFrame, new Uint8Array(server.buffer), cover, 4);
  }
}

export { coverageMask };
