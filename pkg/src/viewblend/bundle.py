"""Dataset directories and deployable scene bundles.

A dataset is the training-side layout (images/cams/depths/labels, one
file per view). A bundle is the deployment artifact: baked mesh, source
views with their per-view feature maps, the blend-MLP weights as a
manifested blob, and a meta.json. All JSON is canonical (sorted keys)
so export -> load -> export is byte-stable.
"""

import json
import os
from dataclasses import dataclass

import numpy as np

from . import scene as sc
from .appearance import BlendMLP
from .autodiff import Tensor, no_grad
from .autodiff.checkpoint import load_blob, save_blob
from .encoder import FeatureMap
from .mesh import read_ply, write_ply
from .renderer import SceneCondition
from .training import TrainScene

FORMAT_VERSION = 1


def _dump_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=1, sort_keys=True)
        f.write("\n")


def _load_json(path):
    with open(path) as f:
        return json.load(f)


# ---------------------------------------------------------------- datasets

def write_dataset(rec, out_dir):
    """TrainScene -> images/NNN.png, cams/NNN.json, depths/NNN.f32,
    labels/NNN.i32 and a scene.json carrying the bbox."""
    os.makedirs(out_dir, exist_ok=True)
    for sub in ("images", "cams"):
        os.makedirs(os.path.join(out_dir, sub), exist_ok=True)
    if rec.depths is not None:
        os.makedirs(os.path.join(out_dir, "depths"), exist_ok=True)
    if rec.labels is not None:
        os.makedirs(os.path.join(out_dir, "labels"), exist_ok=True)
    for i, view in enumerate(rec.views):
        sc.write_png(os.path.join(out_dir, "images", f"{i:03d}.png"),
                     view.pixels)
        with open(os.path.join(out_dir, "cams", f"{i:03d}.json"), "w") as f:
            f.write(view.camera.to_json() + "\n")
        if rec.depths is not None:
            sc.write_raw(os.path.join(out_dir, "depths", f"{i:03d}.f32"),
                         rec.depths[i].astype(np.float32))
        if rec.labels is not None:
            sc.write_raw(os.path.join(out_dir, "labels", f"{i:03d}.i32"),
                         rec.labels[i].astype(np.int32))
    lo, hi = rec.bbox
    _dump_json(os.path.join(out_dir, "scene.json"),
               {"bbox": [list(map(float, lo)), list(map(float, hi))],
                "n_views": len(rec.views), "name": rec.name})
    return out_dir


def load_dataset(path):
    """Read a dataset directory back into a TrainScene.

    Validation is index-based: every image must have a camera with the
    same index, and optional depth/label sets must cover every view.
    """
    img_dir = os.path.join(path, "images")
    if not os.path.isdir(img_dir):
        raise ValueError(f"not a dataset: {path} has no images/ directory")
    names = sorted(n for n in os.listdir(img_dir) if n.endswith(".png"))
    if not names:
        raise ValueError(f"no images in {img_dir}")
    views, depths, labels = [], [], []
    have_depth = os.path.isdir(os.path.join(path, "depths"))
    have_label = os.path.isdir(os.path.join(path, "labels"))
    for n in names:
        idx = os.path.splitext(n)[0]
        cam_path = os.path.join(path, "cams", f"{idx}.json")
        if not os.path.isfile(cam_path):
            raise ValueError(f"view {idx}: missing camera file cams/{idx}.json")
        with open(cam_path) as f:
            cam = sc.Camera.from_json(f.read())
        pixels = sc.read_png(os.path.join(img_dir, n))
        views.append(sc.ViewImage(pixels, cam))
        if have_depth:
            dp = os.path.join(path, "depths", f"{idx}.f32")
            if not os.path.isfile(dp):
                raise ValueError(f"view {idx}: missing depth file "
                                 f"depths/{idx}.f32")
            depths.append(sc.read_raw(dp)[:, :, 0].astype(np.float64))
        if have_label:
            lp = os.path.join(path, "labels", f"{idx}.i32")
            if not os.path.isfile(lp):
                raise ValueError(f"view {idx}: missing label file "
                                 f"labels/{idx}.i32")
            labels.append(sc.read_raw(lp)[:, :, 0].astype(np.int64))
    meta_path = os.path.join(path, "scene.json")
    if os.path.isfile(meta_path):
        meta = _load_json(meta_path)
        bbox = (np.asarray(meta["bbox"][0]), np.asarray(meta["bbox"][1]))
        name = meta.get("name", "")
    else:
        # foreign dataset: bound the orbit's look-at region from the cameras
        centers = np.stack([v.camera.center for v in views])
        mid = centers.mean(axis=0)
        r = 0.5 * float(np.median(np.linalg.norm(centers - mid, axis=1)))
        bbox = (mid - r, mid + r)
        name = os.path.basename(os.path.normpath(path))
    return TrainScene(views=views, depths=depths or None,
                      labels=labels or None, bbox=bbox, name=name)


# ----------------------------------------------------------------- bundles

@dataclass
class SceneBundle:
    root: str
    mesh_path: str
    image_paths: list
    camera_paths: list
    feature_paths: list
    shader_blob: str       # flat little-endian parameter blob
    shader_manifest: str   # name -> shape/dtype/offset JSON next to it
    meta: dict

    def check(self):
        for p in ([self.mesh_path, self.shader_blob, self.shader_manifest]
                  + self.image_paths + self.camera_paths + self.feature_paths):
            if not os.path.isfile(p):
                raise ValueError(f"bundle file missing: {p}")
        if self.meta.get("format_version") != FORMAT_VERSION:
            raise ValueError("unsupported bundle format version "
                             f"{self.meta.get('format_version')!r}")
        manifest = _load_json(self.shader_manifest)
        size = os.path.getsize(self.shader_blob)
        for name, rec in manifest.items():
            n = int(np.prod(rec["shape"])) if rec["shape"] else 1
            end = rec["offset"] + n * np.dtype(rec["dtype"]).itemsize
            if end > size:
                raise ValueError(f"manifest entry {name!r} overruns the blob")
        return self


def export_bundle(mesh, cond, out_dir, near=0.05, far=10.0):
    """Write the deployable bundle for a baked scene.

    Per-view feature maps go out as raw float32 planes next to the PNGs;
    the viewer samples both. Weights are the blend MLP only, in the
    standard blob+manifest checkpoint format.
    """
    if mesh.is_empty:
        raise ValueError("refusing to export an empty mesh")
    os.makedirs(out_dir, exist_ok=True)
    views_dir = os.path.join(out_dir, "views")
    os.makedirs(views_dir, exist_ok=True)
    mesh_path = os.path.join(out_dir, "mesh.ply")
    write_ply(mesh_path, mesh)

    image_paths, camera_paths, feature_paths = [], [], []
    for i, view in enumerate(cond.views):
        ip = os.path.join(views_dir, f"{i:03d}.png")
        cp = os.path.join(views_dir, f"{i:03d}.json")
        fp = os.path.join(views_dir, f"{i:03d}.f32")
        sc.write_png(ip, view.pixels)
        with open(cp, "w") as f:
            f.write(view.camera.to_json() + "\n")
        with no_grad():
            feats = cond.feature_maps[i].features.numpy()
        sc.write_raw(fp, feats.astype(np.float32))
        image_paths.append(ip)
        camera_paths.append(cp)
        feature_paths.append(fp)

    blob = os.path.join(out_dir, "shader.bin")
    save_blob(blob, cond.model.blend.state_arrays())

    lo, hi = cond.bbox
    c_feat = int(cond.feature_maps[0].features.shape[-1])
    meta = {
        "bbox": [list(map(float, np.asarray(lo))),
                 list(map(float, np.asarray(hi)))],
        "far": float(far),
        "feature_channels": c_feat,
        "format_version": FORMAT_VERSION,
        "n_views": len(cond.views),
        "near": float(near),
    }
    _dump_json(os.path.join(out_dir, "meta.json"), meta)
    return SceneBundle(root=out_dir, mesh_path=mesh_path,
                       image_paths=image_paths, camera_paths=camera_paths,
                       feature_paths=feature_paths, shader_blob=blob,
                       shader_manifest=blob + ".json", meta=meta).check()


def open_bundle(path):
    """SceneBundle over an existing directory (validated, nothing loaded)."""
    meta = _load_json(os.path.join(path, "meta.json"))
    n = int(meta["n_views"])
    views_dir = os.path.join(path, "views")
    blob = os.path.join(path, "shader.bin")
    return SceneBundle(
        root=path,
        mesh_path=os.path.join(path, "mesh.ply"),
        image_paths=[os.path.join(views_dir, f"{i:03d}.png") for i in range(n)],
        camera_paths=[os.path.join(views_dir, f"{i:03d}.json")
                      for i in range(n)],
        feature_paths=[os.path.join(views_dir, f"{i:03d}.f32")
                       for i in range(n)],
        shader_blob=blob, shader_manifest=blob + ".json", meta=meta,
    ).check()


class _ShaderOnly:
    """Model stub exposing just the blend MLP (all a bundle needs)."""

    def __init__(self, blend_mlp):
        self.blend = blend_mlp


def load_bundle(path):
    """Bundle directory -> (mesh, condition) ready for the rasterizer.

    The condition carries the stored feature maps and a blend MLP rebuilt
    from the shader blob; there is no volume and no geometry branch, which
    the raster pipeline never touches.
    """
    b = open_bundle(path)
    mesh = read_ply(b.mesh_path)
    views, fms = [], []
    for ip, cp, fp in zip(b.image_paths, b.camera_paths, b.feature_paths):
        with open(cp) as f:
            cam = sc.Camera.from_json(f.read())
        views.append(sc.ViewImage(sc.read_png(ip), cam))
        fms.append(FeatureMap(Tensor(sc.read_raw(fp).astype(np.float64)), cam))

    arrays = load_blob(b.shader_blob)
    w0 = arrays["net.layers.0.W"]
    mlp = BlendMLP(np.random.default_rng(0), c_feat=w0.shape[0] - 6,
                   width=w0.shape[1])
    mlp.load_state_arrays(arrays)
    if mlp.c_feat != b.meta["feature_channels"]:
        raise ValueError("shader input width disagrees with meta "
                         "feature_channels")
    lo, hi = b.meta["bbox"]
    cond = SceneCondition(model=_ShaderOnly(mlp), views=views,
                          feature_maps=fms, volume=None,
                          bbox=(np.asarray(lo), np.asarray(hi)))
    return b, mesh, cond
