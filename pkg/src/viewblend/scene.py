"""Cameras, rays, images, projection, sampling, clip-space transforms.

Conventions shared by every module here:
  - camera frame: x right, y down, z forward (depth is camera-frame z)
  - pixel centers at integer coordinates; the image spans
    [-0.5, W-0.5] x [-0.5, H-0.5] in continuous pixel coords
  - poses are rigid world-from-camera 4x4 matrices
  - NDC depth range [-1, 1], near plane at -1
"""

import json

import numpy as np
from PIL import Image


class Camera:
    """Pinhole camera: 3x3 intrinsics (zero skew), 4x4 pose, (W, H)."""

    def __init__(self, intrinsics, pose, width, height):
        K = np.asarray(intrinsics, dtype=np.float64).reshape(3, 3)
        P = np.asarray(pose, dtype=np.float64).reshape(4, 4)
        R = P[:3, :3]
        if np.abs(R.T @ R - np.eye(3)).max() >= 1e-6:
            raise ValueError("pose rotation block is not orthonormal")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError(f"focal lengths must be positive, got {K[0,0]}, {K[1,1]}")
        if not (0 < K[0, 2] < width and 0 < K[1, 2] < height):
            raise ValueError("principal point outside the image")
        self.K = K
        self.pose = P
        self.width = int(width)
        self.height = int(height)

    @property
    def fx(self):
        return self.K[0, 0]

    @property
    def fy(self):
        return self.K[1, 1]

    @property
    def cx(self):
        return self.K[0, 2]

    @property
    def cy(self):
        return self.K[1, 2]

    @property
    def center(self):
        return self.pose[:3, 3].copy()

    def world_to_camera(self):
        R = self.pose[:3, :3]
        t = self.pose[:3, 3]
        M = np.eye(4)
        M[:3, :3] = R.T
        M[:3, 3] = -R.T @ t
        return M

    def to_dict(self):
        return {
            "intrinsics": [float(v) for v in self.K.reshape(-1)],
            "pose": [float(v) for v in self.pose.reshape(-1)],
            "width": self.width,
            "height": self.height,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(d["intrinsics"], d["pose"], d["width"], d["height"])

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, s):
        return cls.from_dict(json.loads(s))


class Ray:
    __slots__ = ("origin", "direction", "near", "far")

    def __init__(self, origin, direction, near, far):
        d = np.asarray(direction, dtype=np.float64)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"ray direction not unit length: |d| = {n}")
        if not 0 < near < far:
            raise ValueError(f"need 0 < near < far, got {near}, {far}")
        self.origin = np.asarray(origin, dtype=np.float64)
        self.direction = d
        self.near = float(near)
        self.far = float(far)

    def at(self, t):
        return self.origin + t * self.direction


class ViewImage:
    """H x W x C pixel array tied to the camera that produced it."""

    def __init__(self, pixels, camera):
        px = np.asarray(pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.shape[0] != camera.height or px.shape[1] != camera.width:
            raise ValueError(
                f"image {px.shape[:2]} does not match camera "
                f"({camera.height}, {camera.width})"
            )
        self.pixels = px
        self.camera = camera

    @property
    def channels(self):
        return self.pixels.shape[2]


def project_points(camera, points):
    """Batch pinhole projection.

    points: (N, 3) world coords. Returns (uv (N,2), depth (N,), valid (N,)).
    valid is false behind the camera or outside [0, W-1] x [0, H-1].
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    rel = pts - camera.pose[:3, 3]
    cam = rel @ camera.pose[:3, :3]  # row-vector form of R^T (p - t)
    z = cam[:, 2]
    front = z > 0
    safe_z = np.where(front, z, 1.0)
    u = camera.fx * cam[:, 0] / safe_z + camera.cx
    v = camera.fy * cam[:, 1] / safe_z + camera.cy
    uv = np.stack([u, v], axis=1)
    valid = (
        front
        & (u >= 0.0)
        & (u <= camera.width - 1.0)
        & (v >= 0.0)
        & (v <= camera.height - 1.0)
    )
    return uv, z, valid


def project_point(camera, point):
    uv, z, valid = project_points(camera, np.asarray(point)[None, :])
    return uv[0], float(z[0]), bool(valid[0])


def generate_rays(camera, pixels, near=0.01, far=100.0):
    """Rays through continuous pixel coords (N, 2). Returns origins, dirs."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    x = (px[:, 0] - camera.cx) / camera.fx
    y = (px[:, 1] - camera.cy) / camera.fy
    d_cam = np.stack([x, y, np.ones_like(x)], axis=1)
    d_world = d_cam @ camera.pose[:3, :3].T
    d_world /= np.linalg.norm(d_world, axis=1, keepdims=True)
    origins = np.broadcast_to(camera.pose[:3, 3], d_world.shape).copy()
    return origins, d_world


def generate_ray(camera, pixel, near=0.01, far=100.0):
    o, d = generate_rays(camera, np.asarray(pixel, dtype=np.float64)[None, :])
    return Ray(o[0], d[0], near, far)


def bilinear_sample_many(image, uv):
    """Bilinear samples at (N, 2) continuous coords; all must be in bounds."""
    px = image.pixels if isinstance(image, ViewImage) else np.asarray(image)
    if px.ndim == 2:
        px = px[:, :, None]
    H, W = px.shape[:2]
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    u, v = uv[:, 0], uv[:, 1]
    if np.any((u < 0) | (u > W - 1) | (v < 0) | (v > H - 1)):
        bad = uv[(u < 0) | (u > W - 1) | (v < 0) | (v > H - 1)][0]
        raise ValueError(f"bilinear_sample: uv {tuple(bad)} outside image {W}x{H}")
    x0 = np.minimum(np.floor(u).astype(np.int64), max(W - 2, 0))
    y0 = np.minimum(np.floor(v).astype(np.int64), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fu = (u - x0)[:, None]
    fv = (v - y0)[:, None]
    p00 = px[y0, x0]
    p01 = px[y0, x1]
    p10 = px[y1, x0]
    p11 = px[y1, x1]
    top = p00 * (1 - fu) + p01 * fu
    bot = p10 * (1 - fu) + p11 * fu
    return top * (1 - fv) + bot * fv


def bilinear_sample(image, uv):
    return bilinear_sample_many(image, np.asarray(uv, dtype=np.float64)[None, :])[0]


def to_clip_matrix(camera, near, far):
    """World -> clip-space 4x4 with w = camera depth, NDC z in [-1, 1].

    The viewport transform u = (x_ndc + 1)/2 * W - 0.5 (same for v with H)
    recovers project_point's pixel coords.
    """
    if not (0 < near < far):
        raise ValueError(f"need 0 < near < far, got {near}, {far}")
    W, H = camera.width, camera.height
    proj = np.zeros((4, 4))
    proj[0, 0] = 2.0 * camera.fx / W
    proj[0, 2] = (2.0 * camera.cx + 1.0 - W) / W
    proj[1, 1] = 2.0 * camera.fy / H
    proj[1, 2] = (2.0 * camera.cy + 1.0 - H) / H
    proj[2, 2] = (far + near) / (far - near)
    proj[2, 3] = -2.0 * far * near / (far - near)
    proj[3, 2] = 1.0
    return proj @ camera.world_to_camera()


def ndc_to_pixel(ndc_xy, width, height):
    ndc = np.asarray(ndc_xy, dtype=np.float64)
    u = (ndc[..., 0] + 1.0) * 0.5 * width - 0.5
    v = (ndc[..., 1] + 1.0) * 0.5 * height - 0.5
    return np.stack([u, v], axis=-1)


def look_at_camera(eye, target, intrinsics, width, height, up=(0.0, 0.0, 1.0)):
    """Camera at eye looking toward target (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = np.asarray(target, dtype=np.float64) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=np.float64)
    if abs(np.dot(fwd, up) / np.linalg.norm(up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    right = np.cross(fwd, up)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = eye
    return Camera(intrinsics, pose, width, height)


# ---------------------------------------------------------------------------
# Image files: 8-bit PNG for RGB, raw planar float32/int32 for everything else


def write_png(path, image):
    """Save floats in [0, 1] (H x W x 3 or H x W) as 8-bit PNG."""
    arr = np.asarray(image, dtype=np.float64)
    arr = np.clip(arr, 0.0, 1.0)
    data = (arr * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(data).save(path)


def read_png(path):
    """Load a PNG back to float64 in [0, 1]."""
    with Image.open(path) as im:
        arr = np.asarray(im.convert("RGB") if im.mode not in ("L", "RGB") else im)
    return arr.astype(np.float64) / 255.0


_RAW_DTYPES = {"float32": "<f4", "int32": "<i4"}


def write_raw(path, array):
    """Raw planar image: one JSON header line, then little-endian planes.

    Accepts H x W or H x W x C; stores channel-major (C planes of H x W).
    """
    arr = np.asarray(array)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.dtype.kind == "f":
        arr = arr.astype("<f4")
        dt = "float32"
    elif arr.dtype.kind in "iu":
        arr = arr.astype("<i4")
        dt = "int32"
    else:
        raise ValueError(f"unsupported dtype {arr.dtype}")
    H, W, C = arr.shape
    header = {"channels": C, "dtype": dt, "height": H, "layout": "planar", "width": W}
    with open(path, "wb") as f:
        f.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        f.write(np.ascontiguousarray(arr.transpose(2, 0, 1)).tobytes())


def read_raw(path):
    """Read a raw planar image back as H x W x C (float32 or int32)."""
    with open(path, "rb") as f:
        header = json.loads(f.readline().decode())
        data = f.read()
    H, W, C = header["height"], header["width"], header["channels"]
    arr = np.frombuffer(data, dtype=_RAW_DTYPES[header["dtype"]], count=H * W * C)
    return arr.reshape(C, H, W).transpose(1, 2, 0).astype(header["dtype"], copy=True)
