/** Shared viewer types; the wire formats mirror the bundle service. */

export type RenderMode = "rgb" | "depth" | "weights" | "lifted" | "sigma";

export interface ViewerState {
  azimuth: number;    // radians, free-running
  elevation: number;  // radians, clamped inside (-pi/2, pi/2)
  radius: number;     // > 0
  target: [number, number, number];
  mode: RenderMode;
  fps: number;
  parity: boolean;    // compare client frame against POST /render
}

export interface CameraJson {
  intrinsics: number[]; // 9, row-major 3x3
  pose: number[];       // 16, row-major 4x4 world-from-camera
  width: number;
  height: number;
}

export interface BundleMeta {
  bbox: [number[], number[]];
  near: number;
  far: number;
  feature_channels: number;
  format_version: number;
  n_views: number;
}

export interface RawImage {
  width: number;
  height: number;
  channels: number;
  dtype: "float32" | "int32";
  /** planar: channels * height * width */
  data: Float32Array | Int32Array;
}

export interface MeshData {
  vertexCount: number;
  faceCount: number;
  /** interleaved x y z nx ny nz per vertex, as stored */
  vertices: Float32Array;
  indices: Uint32Array;
}
