"""Triangle meshes: marching cubes extraction, normals, PLY/OBJ io."""

import io
import struct
from dataclasses import dataclass, field

import numpy as np
from skimage import measure


@dataclass
class TriMesh:
    vertices: np.ndarray          # (V, 3) float64
    faces: np.ndarray             # (F, 3) int64, indices into vertices
    normals: np.ndarray = None    # (V, 3) float64, unit length

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if self.faces.size and (self.faces.min() < 0
                                or self.faces.max() >= len(self.vertices)):
            raise ValueError("face index out of range")
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.faces)
        else:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
            if len(self.normals) != len(self.vertices):
                raise ValueError("normals/vertices length mismatch")

    @property
    def is_empty(self):
        return len(self.faces) == 0

    @staticmethod
    def empty():
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64),
                       np.zeros((0, 3)))


def face_normals(vertices, faces):
    """Unnormalized face normals (cross product; length = 2x area)."""
    tri = vertices[faces]
    return np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])


def vertex_normals(vertices, faces):
    """Area-weighted vertex normals from face winding.

    Degenerate vertices (no incident area) get +z so the array stays unit.
    """
    n = np.zeros_like(vertices, dtype=np.float64)
    if len(faces):
        fn = face_normals(vertices, faces)
        for k in range(3):
            np.add.at(n, faces[:, k], fn)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    bad = norm[:, 0] < 1e-20
    n[bad] = (0.0, 0.0, 1.0)
    norm[bad] = 1.0
    return n / norm


def drop_degenerate_faces(mesh, area_eps=1e-14):
    """Remove faces with repeated indices or ~zero area; keep vertex set."""
    f = mesh.faces
    if not len(f):
        return mesh
    distinct = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
    area2 = np.linalg.norm(face_normals(mesh.vertices, f), axis=1)
    keep = distinct & (area2 > area_eps)
    return TriMesh(mesh.vertices, f[keep], mesh.normals)


def grid_coords(bbox, m):
    """Per-axis sample coordinates: m voxel centers spanning the bbox."""
    lo, hi = np.asarray(bbox[0], float), np.asarray(bbox[1], float)
    h = (hi - lo) / m
    return [lo[a] + (np.arange(m) + 0.5) * h[a] for a in range(3)], h


def compact_vertices(mesh):
    """Drop unreferenced vertices, renumbering faces (stable order)."""
    used = np.zeros(len(mesh.vertices), dtype=bool)
    used[mesh.faces.reshape(-1)] = True
    remap = np.cumsum(used) - 1
    return TriMesh(mesh.vertices[used], remap[mesh.faces],
                   mesh.normals[used] if mesh.normals is not None else None)


def marching_cubes(values, bbox, iso=0.0, mask=None):
    """Extract the iso surface of an (M, M, M) scalar grid as a TriMesh.

    Grid samples sit at voxel centers of the bbox (grid_coords convention);
    vertices come out in world coordinates. Any cell touching a masked-out
    sample is skipped, exactly: the library's own mask check is looser (it
    keeps cells with any unmasked corner), so faces are re-filtered here by
    the cell their centroid falls in. No crossing anywhere -> empty mesh.
    """
    vol = np.asarray(values, dtype=np.float64)
    if vol.ndim != 3:
        raise ValueError(f"expected a 3D grid, got shape {vol.shape}")
    _, h = grid_coords(bbox, vol.shape[0])
    lo = np.asarray(bbox[0], float)
    if mask is not None and not np.any(mask):
        return TriMesh.empty()
    try:
        verts, faces, _, _ = measure.marching_cubes(
            vol, level=iso, spacing=tuple(h), mask=mask)
    except (ValueError, RuntimeError):
        # level outside data range, or the masked region has no crossing
        return TriMesh.empty()
    mesh = TriMesh(verts.astype(np.float64) + (lo + 0.5 * h), faces)
    if mask is not None:
        # face centroids sit strictly inside their emitting cell
        cen = mesh.vertices[mesh.faces].mean(axis=1)
        cell = np.floor((cen - (lo + 0.5 * h)) / h).astype(np.int64)
        cell = np.clip(cell, 0, vol.shape[0] - 2)
        ok = np.ones(len(cell), dtype=bool)
        for dx in (0, 1):
            for dy in (0, 1):
                for dz in (0, 1):
                    ok &= mask[cell[:, 0] + dx, cell[:, 1] + dy, cell[:, 2] + dz]
        mesh = compact_vertices(TriMesh(mesh.vertices, mesh.faces[ok]))
        if mesh.is_empty:
            return TriMesh.empty()
        mesh = TriMesh(mesh.vertices, mesh.faces)  # re-derive rim normals
    # descent winding on sign-convention SDFs (negative inside) is outward
    return drop_degenerate_faces(mesh)


def edge_face_counts(mesh):
    """Histogram of undirected-edge incidence counts, e.g. {2: n} if closed."""
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]])
    e = np.sort(e, axis=1)
    _, counts = np.unique(e, axis=0, return_counts=True)
    vals, freq = np.unique(counts, return_counts=True)
    return dict(zip(vals.tolist(), freq.tolist()))


def is_watertight(mesh):
    """Every undirected edge shared by exactly two faces."""
    if mesh.is_empty:
        return False
    return set(edge_face_counts(mesh)) == {2}


# ------------------------------------------------------------------ file io

_PLY_HEADER = """ply
format binary_little_endian 1.0
comment baked scene mesh
element vertex {nv}
property float x
property float y
property float z
property float nx
property float ny
property float nz
element face {nf}
property list uchar int vertex_indices
end_header
"""


def write_ply(path, mesh):
    """Binary little-endian PLY: f32 positions + normals, i32 face lists."""
    nv, nf = len(mesh.vertices), len(mesh.faces)
    vdata = np.hstack([mesh.vertices, mesh.normals]).astype("<f4")
    with open(path, "wb") as f:
        f.write(_PLY_HEADER.format(nv=nv, nf=nf).encode("ascii"))
        f.write(vdata.tobytes())
        if nf:
            rec = np.empty((nf, 13), dtype=np.uint8)
            rec[:, 0] = 3
            rec[:, 1:] = mesh.faces.astype("<i4").view(np.uint8).reshape(nf, 12)
            f.write(rec.tobytes())


def read_ply(path):
    """Parse the PLY subset write_ply emits (and common variants of it)."""
    with open(path, "rb") as f:
        data = f.read()
    end = data.find(b"end_header\n")
    if end < 0:
        raise ValueError("not a PLY file (no end_header)")
    header = data[:end].decode("ascii").splitlines()
    body = io.BytesIO(data[end + len(b"end_header\n"):])
    if header[0].strip() != "ply":
        raise ValueError("not a PLY file")
    if not any("binary_little_endian" in ln for ln in header):
        raise ValueError("only binary_little_endian PLY supported")
    counts = {}
    props = {}
    current = None
    for ln in header:
        parts = ln.split()
        if not parts:
            continue
        if parts[0] == "element":
            current = parts[1]
            counts[current] = int(parts[2])
            props[current] = []
        elif parts[0] == "property" and current:
            props[current].append(parts[1:])
    nv = counts.get("vertex", 0)
    nf = counts.get("face", 0)
    vprops = [p[-1] for p in props.get("vertex", [])]
    if vprops[:3] != ["x", "y", "z"]:
        raise ValueError(f"unsupported vertex layout {vprops}")
    stride = len(vprops)
    vdata = np.frombuffer(body.read(4 * stride * nv), dtype="<f4")
    vdata = vdata.reshape(nv, stride).astype(np.float64)
    verts = vdata[:, :3]
    normals = vdata[:, 3:6] if "nx" in vprops else None
    faces = np.empty((nf, 3), dtype=np.int64)
    for i in range(nf):
        (k,) = struct.unpack("<B", body.read(1))
        if k != 3:
            raise ValueError(f"face {i}: only triangles supported, got {k}-gon")
        faces[i] = struct.unpack("<3i", body.read(12))
    return TriMesh(verts, faces, normals)


def write_obj(path, mesh):
    """ASCII OBJ for interchange; v/vn/f records, 1-indexed."""
    with open(path, "w") as f:
        f.write("# baked scene mesh\n")
        for p in mesh.vertices:
            f.write("v %.9g %.9g %.9g\n" % tuple(p))
        for n in mesh.normals:
            f.write("vn %.6f %.6f %.6f\n" % tuple(n))
        for a, b, c in mesh.faces + 1:
            f.write(f"f {a}//{a} {b}//{b} {c}//{c}\n")
