"""HTTP service over a scene bundle: the web viewer's backend.

GET  /meta                  bundle meta JSON
GET  /mesh                  binary PLY
GET  /views/{i}/image       source view PNG
GET  /views/{i}/camera      camera JSON
GET  /views/{i}/features    per-view feature map (raw f32, header line +
                            planar data, same layout the bundle stores)
GET  /shader/manifest       blend-MLP weight manifest JSON
GET  /shader/blob           blend-MLP weight blob
POST /render                body = camera JSON -> PNG frame rendered with
                            the same raster pipeline as the offline path

All responses carry permissive CORS headers. Unknown paths 404, bad
camera JSON 400. /render calls are serialized through one lock; GETs are
static bytes and run concurrently.
"""

import io
import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
from PIL import Image

from . import scene as sc
from .bundle import load_bundle
from .raster import render_realtime

_VIEW_RE = re.compile(r"^/views/(\d+)/(image|camera|features)$")


def _png_bytes(image):
    # quantize exactly like scene.write_png so /render matches offline PNGs
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    u8 = (arr * 255.0 + 0.5).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(u8).save(buf, format="PNG")
    return buf.getvalue()


class BundleService:
    """Loads a bundle once and serves it; render requests share one lock."""

    def __init__(self, bundle_dir, host="127.0.0.1", port=0):
        self.bundle, self.mesh, self.cond = load_bundle(bundle_dir)
        self.near = float(self.bundle.meta["near"])
        self.far = float(self.bundle.meta["far"])
        self._render_lock = threading.Lock()
        self._static = self._collect_static()
        svc = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def _reply(self, code, ctype, body):
                self.send_response(code)
                self.send_header("Content-Type", ctype)
                self.send_header("Content-Length", str(len(body)))
                self.send_header("Access-Control-Allow-Origin", "*")
                self.send_header("Access-Control-Allow-Methods",
                                 "GET, POST, OPTIONS")
                self.send_header("Access-Control-Allow-Headers",
                                 "Content-Type")
                self.end_headers()
                self.wfile.write(body)

            def do_OPTIONS(self):
                self._reply(204, "text/plain", b"")

            def do_GET(self):
                hit = svc._static.get(self.path)
                if hit is None:
                    self._reply(404, "text/plain",
                                f"unknown path {self.path}".encode())
                    return
                self._reply(200, hit[0], hit[1])

            def do_POST(self):
                if self.path != "/render":
                    self._reply(404, "text/plain",
                                f"unknown path {self.path}".encode())
                    return
                n = int(self.headers.get("Content-Length", 0))
                raw = self.rfile.read(n)
                try:
                    cam = sc.Camera.from_json(raw.decode())
                except (ValueError, KeyError, TypeError,
                        UnicodeDecodeError) as e:
                    self._reply(400, "text/plain",
                                f"bad camera: {e}".encode())
                    return
                png = svc.render_png(cam)
                self._reply(200, "image/png", png)

        self.httpd = ThreadingHTTPServer((host, port), Handler)
        self.port = self.httpd.server_address[1]
        self._thread = None

    def _collect_static(self):
        b = self.bundle
        static = {}

        def file_bytes(p):
            with open(p, "rb") as f:
                return f.read()

        meta = json.dumps(b.meta, indent=1, sort_keys=True) + "\n"
        static["/meta"] = ("application/json", meta.encode())
        static["/mesh"] = ("application/octet-stream",
                           file_bytes(b.mesh_path))
        static["/shader/manifest"] = ("application/json",
                                      file_bytes(b.shader_manifest))
        static["/shader/blob"] = ("application/octet-stream",
                                  file_bytes(b.shader_blob))
        for i in range(len(b.image_paths)):
            static[f"/views/{i}/image"] = ("image/png",
                                           file_bytes(b.image_paths[i]))
            static[f"/views/{i}/camera"] = ("application/json",
                                            file_bytes(b.camera_paths[i]))
            static[f"/views/{i}/features"] = ("application/octet-stream",
                                              file_bytes(b.feature_paths[i]))
        return static

    def render_png(self, camera):
        """One serialized raster frame, encoded exactly like the CLI path."""
        with self._render_lock:
            image, _ = render_realtime(self.mesh, self.cond, camera,
                                       self.near, self.far)
        return _png_bytes(image)

    def start(self):
        self._thread = threading.Thread(target=self.httpd.serve_forever,
                                        daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.httpd.shutdown()
        self.httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5.0)

    def serve_forever(self):
        try:
            self.httpd.serve_forever()
        finally:
            self.httpd.server_close()


def serve(bundle_dir, host="127.0.0.1", port=0):
    """Start a BundleService in a background thread; returns it running."""
    return BundleService(bundle_dir, host=host, port=port).start()
