"""Dataset and bundle round trips, canonical serialization."""

import filecmp
import json
import os
import shutil

import numpy as np
import pytest

from viewblend import scene as sc
from viewblend.bundle import (export_bundle, load_bundle, load_dataset,
                              open_bundle, write_dataset)
from viewblend.mesh import marching_cubes
from viewblend.oracle import make_cameras, make_scene
from viewblend.renderer import SceneModel, build_condition
from viewblend.training import scene_from_oracle
from viewblend.autodiff import no_grad
from viewblend.autodiff.checkpoint import load_blob


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    scene = make_scene(31)
    cams = make_cameras(n_views=6, width=16, height=16, seed=31)
    rec = scene_from_oracle(scene, cams, name="ds31")
    out = tmp_path_factory.mktemp("ds") / "scene"
    write_dataset(rec, str(out))
    return str(out), rec


def test_dataset_round_trip(dataset_dir):
    path, rec = dataset_dir
    back = load_dataset(path)
    assert len(back.views) == 6
    for a, b in zip(back.views, rec.views):
        assert np.abs(a.pixels - np.clip(b.pixels, 0, 1)).max() <= 0.5 / 255
        assert np.array_equal(a.camera.K, b.camera.K)
        assert np.array_equal(a.camera.pose, b.camera.pose)
    for a, b in zip(back.depths, rec.depths):
        assert np.array_equal(a, b.astype(np.float32).astype(np.float64))
    for a, b in zip(back.labels, rec.labels):
        assert np.array_equal(a, b)
    assert np.allclose(back.bbox[0], rec.bbox[0])
    assert back.name == "ds31"


def test_camera_json_reserializes_byte_identical(dataset_dir):
    path, _ = dataset_dir
    for i in range(6):
        p = os.path.join(path, "cams", f"{i:03d}.json")
        with open(p, "rb") as f:
            raw = f.read()
        cam = sc.Camera.from_json(raw.decode())
        assert (cam.to_json() + "\n").encode() == raw


def test_missing_camera_names_index(dataset_dir, tmp_path):
    path, _ = dataset_dir
    broken = tmp_path / "broken"
    shutil.copytree(path, broken)
    os.remove(broken / "cams" / "003.json")
    with pytest.raises(ValueError, match="003"):
        load_dataset(str(broken))


def test_missing_depth_names_index(dataset_dir, tmp_path):
    path, _ = dataset_dir
    broken = tmp_path / "broken_d"
    shutil.copytree(path, broken)
    os.remove(broken / "depths" / "001.f32")
    with pytest.raises(ValueError, match="001"):
        load_dataset(str(broken))


def test_dataset_without_scene_json_gets_camera_bbox(dataset_dir, tmp_path):
    path, _ = dataset_dir
    alt = tmp_path / "foreign"
    shutil.copytree(path, alt)
    os.remove(alt / "scene.json")
    back = load_dataset(str(alt))
    lo, hi = back.bbox
    assert np.all(np.asarray(hi) > np.asarray(lo))


# ----------------------------------------------------------------- bundles


@pytest.fixture(scope="module")
def bundle_setup(tmp_path_factory):
    scene = make_scene(33)
    cams = make_cameras(n_views=3, width=16, height=16, seed=33)
    rec = scene_from_oracle(scene, cams, name="b33")
    model = SceneModel(np.random.default_rng(3), c_feat=4, c_vol=4,
                       d_model=8, blocks=1, heads=2, grid=8)
    with no_grad():
        cond = build_condition(model, rec.views, rec.bbox)
    lo = np.asarray(rec.bbox[0], float)
    hi = np.asarray(rec.bbox[1], float)
    mid, r, m = (lo + hi) / 2, 0.5 * ((hi - lo) / 2).min(), 12
    ax = [lo[a] + (np.arange(m) + 0.5) * (hi[a] - lo[a]) / m for a in range(3)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    mesh = marching_cubes(np.sqrt((X - mid[0]) ** 2 + (Y - mid[1]) ** 2
                                  + (Z - mid[2]) ** 2) - r, rec.bbox)
    out = tmp_path_factory.mktemp("bundle") / "b"
    bundle = export_bundle(mesh, cond, str(out))
    return bundle, mesh, cond


def test_export_structure_and_meta(bundle_setup):
    bundle, mesh, cond = bundle_setup
    assert bundle.meta["format_version"] == 1
    assert bundle.meta["n_views"] == len(cond.views)
    assert bundle.meta["feature_channels"] == \
        cond.feature_maps[0].features.shape[-1]
    for p in bundle.image_paths + bundle.camera_paths + bundle.feature_paths:
        assert os.path.isfile(p)


def test_shader_blob_parses_under_manifest(bundle_setup):
    bundle, _, cond = bundle_setup
    arrays = load_blob(bundle.shader_blob)
    want = cond.model.blend.state_arrays()
    assert set(arrays) == set(want)
    for k in want:
        assert np.array_equal(arrays[k], want[k])


def test_load_bundle_structural_equality(bundle_setup):
    bundle, mesh, cond = bundle_setup
    _, mesh2, cond2 = load_bundle(bundle.root)
    assert np.array_equal(mesh2.vertices,
                          mesh.vertices.astype(np.float32).astype(np.float64))
    assert np.array_equal(mesh2.faces, mesh.faces)
    for v2, v1 in zip(cond2.views, cond.views):
        assert np.abs(v2.pixels - np.clip(v1.pixels, 0, 1)).max() <= 0.5 / 255
        assert np.array_equal(v2.camera.pose, v1.camera.pose)
    for f2, f1 in zip(cond2.feature_maps, cond.feature_maps):
        a = f1.features.numpy().astype(np.float32).astype(np.float64)
        assert np.array_equal(f2.features.numpy(), a)
    w2 = cond2.model.blend.state_arrays()
    for k, v in cond.model.blend.state_arrays().items():
        assert np.array_equal(w2[k], v)


def _tree_bytes(root):
    out = {}
    for base, _, files in os.walk(root):
        for fn in files:
            p = os.path.join(base, fn)
            with open(p, "rb") as f:
                out[os.path.relpath(p, root)] = f.read()
    return out


def test_reexport_is_byte_stable(bundle_setup, tmp_path):
    bundle, mesh, cond = bundle_setup
    _, mesh2, cond2 = load_bundle(bundle.root)
    export_bundle(mesh2, cond2, str(tmp_path / "again"))
    a = _tree_bytes(bundle.root)
    b = _tree_bytes(str(tmp_path / "again"))
    assert set(a) == set(b)
    for k in a:
        assert a[k] == b[k], f"{k} differs across export/load/export"


def test_bundle_missing_file_rejected(bundle_setup, tmp_path):
    bundle, _, _ = bundle_setup
    broken = tmp_path / "nofeat"
    shutil.copytree(bundle.root, broken)
    os.remove(broken / "views" / "001.f32")
    with pytest.raises(ValueError, match="missing"):
        open_bundle(str(broken))


def test_bundle_bad_version_rejected(bundle_setup, tmp_path):
    bundle, _, _ = bundle_setup
    broken = tmp_path / "badver"
    shutil.copytree(bundle.root, broken)
    meta = json.loads((broken / "meta.json").read_text())
    meta["format_version"] = 2
    (broken / "meta.json").write_text(json.dumps(meta))
    with pytest.raises(ValueError, match="version"):
        open_bundle(str(broken))


def test_export_empty_mesh_rejected(bundle_setup, tmp_path):
    from viewblend.mesh import TriMesh
    _, _, cond = bundle_setup
    with pytest.raises(ValueError):
        export_bundle(TriMesh.empty(), cond, str(tmp_path / "e"))
