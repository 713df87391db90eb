import { describe, expect, it } from "vitest";

import { packUniform, type BlendWeights } from "../src/manifest.js";
import { fragmentSrc, vertexSrc } from "../src/shaders.js";

function fakeWeights(cFeat: number, width: number): BlendWeights {
  const inD = cFeat + 6;
  return {
    cFeat, width,
    W0: new Float64Array(inD * width), b0: new Float64Array(width),
    W1: new Float64Array(width * width), b1: new Float64Array(width),
    W2: new Float64Array(width), b2: new Float64Array(1),
    dims: [inD, width, width, width, width, 1],
  };
}

// re-evaluate the GLSL const int expressions with the same integer math
function glslOffsets(cFeat: number, width: number): number[] {
  const inD = cFeat + 6;
  const pad4 = (n: number) => Math.floor((n + 3) / 4) * 4;
  const OFF_W0 = 0;
  const OFF_B0 = OFF_W0 + pad4(inD * width);
  const OFF_W1 = OFF_B0 + pad4(width);
  const OFF_B1 = OFF_W1 + pad4(width * width);
  const OFF_W2 = OFF_B1 + pad4(width);
  const OFF_B2 = OFF_W2 + pad4(width);
  return [OFF_W0, OFF_B0, OFF_W1, OFF_B1, OFF_W2, OFF_B2];
}

describe("shader sources", () => {
  it("uniform block layout matches packUniform for several sizes", () => {
    for (const [c, w] of [[16, 32], [8, 16], [4, 8], [16, 64]]) {
      const { offsets, data } = packUniform(fakeWeights(c, w));
      expect(glslOffsets(c, w)).toEqual(offsets);
      const src = fragmentSrc(4, c, w);
      const m = src.match(/vec4 wdata\[(\d+)\]/)!;
      expect(parseInt(m[1], 10) * 4).toBe(data.length);
    }
  });

  it("bakes the view/feature constants into the source", () => {
    const src = fragmentSrc(4, 16, 32);
    expect(src).toContain("#define N_VIEWS 4");
    expect(src).toContain("#define C_FEAT 16");
    expect(src).toContain("#define QUADS 4");
    expect(src).toContain("#define IN_DIM 22");
  });

  it("fragment program implements the masked softmax contract", () => {
    const src = fragmentSrc(4, 16, 32);
    expect(src).toContain("1.0e9");                   // mask offset
    expect(src).toContain("omega[i] = 1.0 / float(N_VIEWS)"); // occluded fill
    expect(src).toContain("exp(logits[i] - mx)");     // stable softmax
    expect(src).toMatch(/uMode == 4[\s\S]*0\.5 \+ \(s - 1\.0\)/); // sigma debug
  });

  it("vertex shader forwards world position", () => {
    expect(vertexSrc).toContain("vWorld = aPos");
    expect(vertexSrc).toContain("uProj * uView");
  });

  it("declares every uniform the viewer binds", () => {
    const src = fragmentSrc(2, 8, 16);
    for (const u of ["uColor", "uFeat", "uProp", "uHasProp", "uEye",
                     "uSrcCenter", "uSrcRot", "uSrcK", "uSrcSize",
                     "uMode", "uNear", "uFar"]) {
      expect(src).toContain(u);
    }
  });
});
