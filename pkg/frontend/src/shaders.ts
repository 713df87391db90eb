/**
 * GLSL 300 es sources. The fragment program mirrors the service's
 * deferred shading step: per fragment, project the world point into
 * each source view, manually bilinear-sample colors and features
 * (clamped, pixel centers at integer coords, exactly like the CPU
 * sampler), zero invalid views, run the 3-layer blend MLP, masked
 * softmax, convex blend. Modes: 0 rgb, 1 depth, 2 argmax-view heatmap,
 * 3 lifted property, 4 sum-omega debug (red = 0.5 + (sum-1)*100).
 */

export const SIGMA_SCALE = 100.0;

export const vertexSrc = `#version 300 es
precision highp float;
in vec3 aPos;
in vec3 aNormal;
uniform mat4 uView;
uniform mat4 uProj;
out vec3 vWorld;

void main() {
  vWorld = aPos;
  gl_Position = uProj * uView * vec4(aPos, 1.0);
}
`;

export function fragmentSrc(nViews: number, cFeat: number, width: number): string {
  const quads = Math.ceil(cFeat / 4);
  const nw4 = (inD: number, outD: number) =>
    Math.ceil((inD * outD) / 4) + Math.ceil(outD / 4);
  const totalVec4 = nw4(cFeat + 6, width) + nw4(width, width) + nw4(width, 1);
  return `#version 300 es
precision highp float;
precision highp int;
precision highp sampler2DArray;

#define N_VIEWS ${nViews}
#define C_FEAT ${cFeat}
#define QUADS ${quads}
#define WIDTH ${width}
#define IN_DIM ${cFeat + 6}

in vec3 vWorld;
out vec4 outColor;

uniform sampler2DArray uColor;   // N_VIEWS layers, RGBA8
uniform sampler2DArray uFeat;    // N_VIEWS*QUADS layers, RGBA32F
uniform sampler2DArray uProp;    // lifted property, N_VIEWS layers
uniform int uHasProp;
uniform vec3 uEye;
uniform vec3 uSrcCenter[N_VIEWS];
uniform mat3 uSrcRot[N_VIEWS];   // R^T, world -> camera
uniform vec4 uSrcK[N_VIEWS];     // fx fy cx cy
uniform vec2 uSrcSize[N_VIEWS];  // W H
uniform int uMode;
uniform float uNear;
uniform float uFar;

layout(std140) uniform Weights { vec4 wdata[${totalVec4}]; };

// segment offsets in floats, each vec4-aligned (see packUniform)
const int OFF_W0 = 0;
const int OFF_B0 = OFF_W0 + ((IN_DIM * WIDTH + 3) / 4) * 4;
const int OFF_W1 = OFF_B0 + ((WIDTH + 3) / 4) * 4;
const int OFF_B1 = OFF_W1 + ((WIDTH * WIDTH + 3) / 4) * 4;
const int OFF_W2 = OFF_B1 + ((WIDTH + 3) / 4) * 4;
const int OFF_B2 = OFF_W2 + ((WIDTH + 3) / 4) * 4;

float wAt(int i) {
  return wdata[i >> 2][i & 3];
}

// clamped bilinear fetch matching the CPU sampler: x0 = min(floor(u), W-2)
vec4 bilinear(sampler2DArray tex, vec2 uv, int layer, vec2 size) {
  float W = size.x, H = size.y;
  float u = clamp(uv.x, 0.0, W - 1.0);
  float v = clamp(uv.y, 0.0, H - 1.0);
  float x0 = min(floor(u), max(W - 2.0, 0.0));
  float y0 = min(floor(v), max(H - 2.0, 0.0));
  int ix0 = int(x0), iy0 = int(y0);
  int ix1 = min(ix0 + 1, int(W) - 1);
  int iy1 = min(iy0 + 1, int(H) - 1);
  float fu = u - x0, fv = v - y0;
  vec4 p00 = texelFetch(tex, ivec3(ix0, iy0, layer), 0);
  vec4 p01 = texelFetch(tex, ivec3(ix1, iy0, layer), 0);
  vec4 p10 = texelFetch(tex, ivec3(ix0, iy1, layer), 0);
  vec4 p11 = texelFetch(tex, ivec3(ix1, iy1, layer), 0);
  return mix(mix(p00, p01, fu), mix(p10, p11, fu), fv);
}

float mlpLogit(float x[IN_DIM]) {
  float h0[WIDTH];
  for (int j = 0; j < WIDTH; j++) h0[j] = wAt(OFF_B0 + j);
  for (int i = 0; i < IN_DIM; i++) {
    float xi = x[i];
    for (int j = 0; j < WIDTH; j++) h0[j] += xi * wAt(OFF_W0 + i * WIDTH + j);
  }
  float h1[WIDTH];
  for (int j = 0; j < WIDTH; j++) h1[j] = wAt(OFF_B1 + j);
  for (int i = 0; i < WIDTH; i++) {
    float hi = max(h0[i], 0.0);
    for (int j = 0; j < WIDTH; j++) h1[j] += hi * wAt(OFF_W1 + i * WIDTH + j);
  }
  float out1 = wAt(OFF_B2);
  for (int i = 0; i < WIDTH; i++) out1 += max(h1[i], 0.0) * wAt(OFF_W2 + i);
  return out1;
}

void main() {
  vec3 d = normalize(vWorld - uEye);

  float mask[N_VIEWS];
  vec3 cols[N_VIEWS];
  vec3 props[N_VIEWS];
  float feats[N_VIEWS * C_FEAT];
  vec3 dds[N_VIEWS];
  for (int i = 0; i < N_VIEWS; i++) {
    vec3 rel = vWorld - uSrcCenter[i];
    vec3 cam = uSrcRot[i] * rel;
    float z = cam.z;
    float sz = z > 0.0 ? z : 1.0;
    vec2 uv = vec2(uSrcK[i].x * cam.x / sz + uSrcK[i].z,
                   uSrcK[i].y * cam.y / sz + uSrcK[i].w);
    bool ok = z > 0.0
      && uv.x >= 0.0 && uv.x <= uSrcSize[i].x - 1.0
      && uv.y >= 0.0 && uv.y <= uSrcSize[i].y - 1.0;
    float m = ok ? 1.0 : 0.0;
    mask[i] = m;
    cols[i] = bilinear(uColor, uv, i, uSrcSize[i]).rgb * m;
    props[i] = uHasProp != 0 ? bilinear(uProp, uv, i, uSrcSize[i]).rgb * m
                             : vec3(0.0);
    for (int q = 0; q < QUADS; q++) {
      vec4 fq = bilinear(uFeat, uv, i * QUADS + q, uSrcSize[i]) * m;
      for (int c = 0; c < 4; c++) {
        int ch = q * 4 + c;
        if (ch < C_FEAT) feats[i * C_FEAT + ch] = fq[c];
      }
    }
    dds[i] = normalize(uSrcCenter[i] - vWorld) * m;
  }

  float logits[N_VIEWS];
  float x[IN_DIM];
  for (int i = 0; i < N_VIEWS; i++) {
    for (int c = 0; c < C_FEAT; c++) x[c] = feats[i * C_FEAT + c];
    x[C_FEAT + 0] = d.x; x[C_FEAT + 1] = d.y; x[C_FEAT + 2] = d.z;
    x[C_FEAT + 3] = dds[i].x; x[C_FEAT + 4] = dds[i].y; x[C_FEAT + 5] = dds[i].z;
    logits[i] = mlpLogit(x);
  }

  float any = 0.0;
  float mx = -1.0e30;
  for (int i = 0; i < N_VIEWS; i++) {
    any += mask[i];
    logits[i] = logits[i] * mask[i] - (1.0 - mask[i]) * 1.0e9;
    mx = max(mx, logits[i]);
  }
  float omega[N_VIEWS];
  if (any == 0.0) {
    for (int i = 0; i < N_VIEWS; i++) omega[i] = 1.0 / float(N_VIEWS);
  } else {
    float s = 0.0;
    for (int i = 0; i < N_VIEWS; i++) {
      omega[i] = exp(logits[i] - mx);
      s += omega[i];
    }
    for (int i = 0; i < N_VIEWS; i++) omega[i] /= s;
  }

  if (uMode == 1) {
    float t = clamp((distance(vWorld, uEye) - uNear) / (uFar - uNear), 0.0, 1.0);
    outColor = vec4(vec3(1.0 - t), 1.0);
    return;
  }
  if (uMode == 2) {
    int best = 0;
    for (int i = 1; i < N_VIEWS; i++) if (omega[i] > omega[best]) best = i;
    float h = float(best) / float(max(N_VIEWS - 1, 1));
    outColor = vec4(h, 1.0 - h, 0.5, 1.0);
    return;
  }
  if (uMode == 4) {
    float s = 0.0;
    for (int i = 0; i < N_VIEWS; i++) s += omega[i];
    outColor = vec4(0.5 + (s - 1.0) * ${SIGMA_SCALE.toFixed(1)}, 0.0, 0.0, 1.0);
    return;
  }
  vec3 acc = vec3(0.0);
  for (int i = 0; i < N_VIEWS; i++) {
    acc += omega[i] * (uMode == 3 ? props[i] : cols[i]);
  }
  outColor = vec4(acc, 1.0);
}
`;
}
