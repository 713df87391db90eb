import { readFileSync } from "node:fs";
import { createServer, type Server } from "node:http";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { BundleClient, BundleError, loadBundle } from "../src/client.js";

const FIX = join(__dirname, "fixtures");
const BUNDLE = join(FIX, "bundle");

// serves the fixture bundle with the same routes as the real service
function staticServer(metaPatch?: (m: any) => void): Server {
  const meta = JSON.parse(readFileSync(join(BUNDLE, "meta.json"), "utf8"));
  if (metaPatch) metaPatch(meta);
  const renderPng = readFileSync(join(FIX, "render0.png"));
  return createServer((req, res) => {
    const send = (ctype: string, body: Buffer | string) => {
      res.writeHead(200, { "Content-Type": ctype });
      res.end(body);
    };
    if (req.method === "POST" && req.url === "/render") {
      send("image/png", renderPng);
      return;
    }
    const m = req.url!.match(/^\/views\/(\d+)\/(image|camera|features)$/);
    try {
      if (req.url === "/meta") send("application/json", JSON.stringify(meta));
      else if (req.url === "/mesh") send("application/octet-stream", readFileSync(join(BUNDLE, "mesh.ply")));
      else if (req.url === "/shader/manifest") send("application/json", readFileSync(join(BUNDLE, "shader.bin.json")));
      else if (req.url === "/shader/blob") send("application/octet-stream", readFileSync(join(BUNDLE, "shader.bin")));
      else if (m) {
        const i = m[1].padStart(3, "0");
        const ext = { image: ".png", camera: ".json", features: ".f32" }[m[2]]!;
        send("application/octet-stream", readFileSync(join(BUNDLE, "views", i + ext)));
      } else {
        res.writeHead(404);
        res.end("unknown path");
      }
    } catch {
      res.writeHead(404);
      res.end("missing");
    }
  });
}

describe("bundle client", () => {
  let server: Server;
  let base: string;

  beforeAll(async () => {
    server = staticServer();
    await new Promise<void>((ok) => server.listen(0, "127.0.0.1", ok));
    const addr = server.address() as any;
    base = `http://127.0.0.1:${addr.port}`;
  });

  afterAll(() => server.close());

  it("loads the whole bundle", async () => {
    const res = await loadBundle(new BundleClient(base));
    expect(res.meta.format_version).toBe(1);
    expect(res.cameras.length).toBe(res.meta.n_views);
    expect(res.images.length).toBe(res.meta.n_views);
    expect(res.features.length).toBe(res.meta.n_views);
    expect(res.mesh.vertexCount).toBeGreaterThan(0);
    expect(res.weights.cFeat).toBe(res.meta.feature_channels);
    // PNG magic on the image bytes
    const sig = new Uint8Array(res.images[0], 0, 4);
    expect(Array.from(sig)).toEqual([0x89, 0x50, 0x4e, 0x47]);
  });

  it("renderServer returns the served PNG bytes", async () => {
    const client = new BundleClient(base);
    const cam = readFileSync(join(BUNDLE, "views", "000.json"), "utf8");
    const got = new Uint8Array(await client.renderServer(cam));
    const want = readFileSync(join(FIX, "render0.png"));
    expect(Buffer.compare(Buffer.from(got), want)).toBe(0);
  });

  it("404 paths raise BundleError with the status", async () => {
    const client = new BundleClient(base);
    await expect(client.viewCamera(99)).rejects.toThrow(/HTTP 404/);
  });

  it("unreachable service raises a network error", async () => {
    const client = new BundleClient("http://127.0.0.1:9");
    await expect(client.meta()).rejects.toThrow(BundleError);
    await expect(client.meta()).rejects.toThrow(/network failure/);
  });
});

describe("format version gate", () => {
  it("rejects future format versions up front", async () => {
    const server = staticServer((m) => { m.format_version = 2; });
    await new Promise<void>((ok) => server.listen(0, "127.0.0.1", ok));
    const addr = server.address() as any;
    try {
      const client = new BundleClient(`http://127.0.0.1:${addr.port}`);
      await expect(loadBundle(client)).rejects.toThrow(/format_version 2/);
    } finally {
      server.close();
    }
  });
});
