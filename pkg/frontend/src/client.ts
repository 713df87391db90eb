import { blendWeights, parseManifest, type BlendWeights } from "./manifest.js";
import { parsePly } from "./ply.js";
import { parseRaw } from "./raw.js";
import { cameraFromJson, type Cam } from "./camera.js";
import type { BundleMeta, MeshData, RawImage } from "./types.js";

export const SUPPORTED_FORMAT = 1;

export class BundleError extends Error {}

type Fetch = typeof fetch;

/** Thin typed client over the bundle service HTTP API. */
export class BundleClient {
  constructor(private base: string, private fetchImpl: Fetch = fetch) {
    this.base = base.replace(/\/+$/, "");
  }

  private async get(path: string): Promise<Response> {
    let res: Response;
    try {
      res = await this.fetchImpl(this.base + path);
    } catch (e: any) {
      throw new BundleError(`network failure on GET ${path}: ${e.message ?? e}`);
    }
    if (!res.ok) throw new BundleError(`GET ${path}: HTTP ${res.status}`);
    return res;
  }

  async meta(): Promise<BundleMeta> {
    const m = await (await this.get("/meta")).json();
    if (m.format_version !== SUPPORTED_FORMAT) {
      throw new BundleError(
        `bundle format_version ${m.format_version}, viewer supports ${SUPPORTED_FORMAT}`);
    }
    return m as BundleMeta;
  }

  async mesh(): Promise<MeshData> {
    return parsePly(await (await this.get("/mesh")).arrayBuffer());
  }

  async viewImageBytes(i: number): Promise<ArrayBuffer> {
    return (await this.get(`/views/${i}/image`)).arrayBuffer();
  }

  async viewCamera(i: number): Promise<Cam> {
    return cameraFromJson(await (await this.get(`/views/${i}/camera`)).json());
  }

  async viewFeatures(i: number): Promise<RawImage> {
    return parseRaw(await (await this.get(`/views/${i}/features`)).arrayBuffer());
  }

  async shader(): Promise<BlendWeights> {
    const manifest = parseManifest(await (await this.get("/shader/manifest")).text());
    const blob = await (await this.get("/shader/blob")).arrayBuffer();
    return blendWeights(manifest, blob);
  }

  /** POST /render with a camera; returns the served PNG bytes. */
  async renderServer(cameraJson: string): Promise<ArrayBuffer> {
    let res: Response;
    try {
      res = await this.fetchImpl(this.base + "/render", {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: cameraJson,
      });
    } catch (e: any) {
      throw new BundleError(`network failure on POST /render: ${e.message ?? e}`);
    }
    if (!res.ok) {
      throw new BundleError(`POST /render: HTTP ${res.status} ${await res.text()}`);
    }
    return res.arrayBuffer();
  }
}

export interface BundleResources {
  meta: BundleMeta;
  mesh: MeshData;
  cameras: Cam[];
  images: ArrayBuffer[];   // PNG bytes, decoded by the GL layer
  features: RawImage[];
  weights: BlendWeights;
}

/** Fetch everything the viewer needs; parallel per-view requests. */
export async function loadBundle(client: BundleClient): Promise<BundleResources> {
  const meta = await client.meta();
  const [mesh, weights] = await Promise.all([client.mesh(), client.shader()]);
  const idx = Array.from({ length: meta.n_views }, (_, i) => i);
  const [cameras, images, features] = await Promise.all([
    Promise.all(idx.map((i) => client.viewCamera(i))),
    Promise.all(idx.map((i) => client.viewImageBytes(i))),
    Promise.all(idx.map((i) => client.viewFeatures(i))),
  ]);
  if (weights.cFeat !== meta.feature_channels) {
    throw new BundleError(
      `shader expects ${weights.cFeat} feature channels, bundle has ${meta.feature_channels}`);
  }
  return { meta, mesh, cameras, images, features, weights };
}
