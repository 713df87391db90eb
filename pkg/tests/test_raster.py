"""Tiled rasterizer: fill rule, depth test, oracle agreement, shading."""

import numpy as np
import pytest

from viewblend import scene as sc
from viewblend.mesh import TriMesh, marching_cubes
from viewblend.oracle import make_cameras, make_scene
from viewblend.raster import (edge_clearance, prune_faces, rasterize,
                              raycast_ids, render_realtime, shade,
                              visible_faces)
from viewblend.renderer import SceneModel, build_condition
from viewblend.training import scene_from_oracle

K33 = [[64.0, 0, 32], [0, 64.0, 32], [0, 0, 1]]


def _cam(eye=(0.0, 0.0, -3.0), target=(0.0, 0.0, 0.0), wh=64):
    K = [[1.0 * wh, 0, wh / 2], [0, 1.0 * wh, wh / 2], [0, 0, 1]]
    return sc.look_at_camera(np.asarray(eye, float), np.asarray(target, float),
                             K, wh, wh)


def _fullscreen_pair():
    # two stacked full-frame triangles; id 0 is farther (z=1), id 1 nearer
    V = np.array([[-3.0, -3, 1], [3, -3, 1], [0, 4, 1],
                  [-3.0, -3, 0], [3, -3, 0], [0, 4, 0]])
    F = np.array([[0, 1, 2], [3, 4, 5]])
    return TriMesh(V, F)


def test_depth_test_nearer_wins():
    gb = rasterize(_fullscreen_pair(), _cam(), 0.01, 100.0)
    cov = gb.covered
    assert cov.sum() > 3000
    assert np.all(gb.tri_id[cov] == 1)
    assert np.allclose(gb.depth[cov], 3.0)  # camera at z=-3, plane z=0


def test_empty_mesh_all_background():
    gb = rasterize(TriMesh.empty(), _cam(), 0.01, 100.0)
    assert np.all(gb.tri_id == -1)
    assert np.all(np.isinf(gb.depth))
    assert np.all(gb.bary == 0.0)


def test_barycentrics_and_points_on_covered():
    gb = rasterize(_fullscreen_pair(), _cam(), 0.01, 100.0)
    cov = gb.covered
    b = gb.bary[cov]
    assert b.min() >= 0.0
    assert np.allclose(b.sum(axis=1), 1.0, atol=1e-12)
    assert np.allclose(gb.point[cov][:, 2], 0.0, atol=1e-12)  # winner plane


def test_depth_tie_lower_id_wins():
    V = np.array([[-3.0, -3, 0], [3, -3, 0], [0, 4, 0]])
    F = np.array([[0, 1, 2], [0, 1, 2]])  # identical triangles
    gb = rasterize(TriMesh(V, F), _cam(), 0.01, 100.0)
    assert np.all(gb.tri_id[gb.covered] == 0)


def test_shared_edge_covered_exactly_once():
    # quad split along the diagonal; count coverage of each half separately
    V = np.array([[-1.0, -1, 0], [1, -1, 0], [1, 1, 0], [-1, 1, 0]])
    quad = TriMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))
    cam = _cam()
    c1 = rasterize(TriMesh(V, np.array([[0, 1, 2]])), cam, 0.01, 100.0).covered
    c2 = rasterize(TriMesh(V, np.array([[0, 2, 3]])), cam, 0.01, 100.0).covered
    both = rasterize(quad, cam, 0.01, 100.0).covered
    counts = c1.astype(int) + c2.astype(int)
    assert counts.max() == 1          # diagonal pixels belong to one half only
    assert np.array_equal(counts > 0, both)
    # the diagonal does carry exactly-on-edge pixels in this framing
    clear = edge_clearance(quad, cam, 0.01, 100.0)
    assert np.any(both & (clear < 1e-9))


def test_raycast_agreement_random_soups():
    cam = _cam(wh=64)
    rng = np.random.default_rng(5)
    for trial in range(10):
        V = rng.uniform(-1.2, 1.2, (120, 3))
        F = rng.integers(0, 120, (200, 3))
        ok_f = (F[:, 0] != F[:, 1]) & (F[:, 1] != F[:, 2]) & (F[:, 0] != F[:, 2])
        mesh = TriMesh(V, F[ok_f])
        ids_r = rasterize(mesh, cam, 0.01, 100.0).tri_id
        ids_o = raycast_ids(mesh, cam, 0.01, 100.0)
        interior = edge_clearance(mesh, cam, 0.01, 100.0) >= 0.5
        assert np.array_equal(ids_r[interior], ids_o[interior]), f"trial {trial}"


def test_near_plane_clipping_no_crash():
    # triangle starting behind the camera, extending in front
    V = np.array([[0.0, -0.5, -5.0], [0.5, 0.5, 1.0], [-0.5, 0.5, 1.0]])
    mesh = TriMesh(V, np.array([[0, 1, 2]]))
    gb = rasterize(mesh, _cam(), 0.5, 100.0)
    cov = gb.covered
    assert cov.sum() > 0
    assert gb.depth[cov].min() >= 0.5 - 1e-9


def test_deterministic_bitwise():
    mesh = _fullscreen_pair()
    a = rasterize(mesh, _cam(), 0.01, 100.0)
    b = rasterize(mesh, _cam(), 0.01, 100.0)
    assert np.array_equal(a.tri_id, b.tri_id)
    assert np.array_equal(a.depth, b.depth)
    assert np.array_equal(a.bary, b.bary)
    assert np.array_equal(a.point, b.point)


# ------------------------------------------------------------------ shading


@pytest.fixture(scope="module")
def shade_setup():
    scene = make_scene(21)
    cams = make_cameras(n_views=4, width=24, height=24, seed=21)
    rec = scene_from_oracle(scene, cams, name="shade")
    model = SceneModel(np.random.default_rng(2), c_feat=4, c_vol=4,
                       d_model=8, blocks=1, heads=2, grid=8)
    from viewblend.autodiff import no_grad
    with no_grad():
        cond = build_condition(model, rec.views[:3], rec.bbox)
    lo, hi = rec.bbox
    c = 0.5 * (lo + hi)
    V = np.array([[lo[0], lo[1], c[2]], [hi[0], lo[1], c[2]],
                  [hi[0], hi[1], c[2]], [lo[0], hi[1], c[2]]])
    mesh = TriMesh(V, np.array([[0, 1, 2], [0, 2, 3]]))
    return rec, cond, mesh


def test_shade_constant_sources(shade_setup):
    rec, cond, mesh = shade_setup
    cam = rec.views[3].camera
    gb = rasterize(mesh, cam, 0.01, 100.0)
    assert gb.covered.sum() > 0
    gray = [np.full_like(v.pixels, 0.5) for v in cond.views]
    img = shade(gb, cond, value_maps=gray, background=0.0)
    cov = gb.covered
    assert np.all(np.abs(img[cov] - 0.5) < 1e-12)
    assert np.all(img[~cov] == 0.0)


def test_render_realtime_composition(shade_setup):
    rec, cond, mesh = shade_setup
    cam = rec.views[3].camera
    img, timing = render_realtime(mesh, cond, cam, 0.01, 100.0)
    gb = rasterize(mesh, cam, 0.01, 100.0)
    ref = shade(gb, cond)
    assert np.array_equal(img, ref)
    assert timing.geometry_ms > 0 and timing.raster_ms > 0
    assert timing.shade_ms > 0 and timing.total_ms > 0
    assert timing.fps == pytest.approx(1000.0 / timing.total_ms)
    assert timing.total_ms >= (timing.geometry_ms + timing.raster_ms
                               + timing.shade_ms) - 1e-6


# ------------------------------------------------------------------ pruning


def test_prune_keeps_single_visible_triangle():
    V = np.array([[-1.0, -1, 0], [1, -1, 0], [0, 1, 0]])
    mesh = TriMesh(V, np.array([[0, 1, 2]]))
    out = prune_faces(mesh, [_cam()])
    assert len(out.faces) == 1


def test_prune_removes_hidden_interior():
    # sphere mesh plus a small triangle hidden inside it
    ax = np.linspace(-1.2, 1.2, 24)
    X, Y, Z = np.meshgrid(ax, ax, ax, indexing="ij")
    sdf = np.sqrt(X**2 + Y**2 + Z**2) - 1.0
    bbox = (np.full(3, -1.2), np.full(3, 1.2))
    sphere = marching_cubes(sdf, bbox)
    nv = len(sphere.vertices)
    V = np.vstack([sphere.vertices,
                   np.array([[0.0, 0, 0], [0.1, 0, 0], [0, 0.1, 0]])])
    F = np.vstack([sphere.faces, [[nv, nv + 1, nv + 2]]])
    mesh = TriMesh(V, F)
    cams = [_cam((0, 0, -3)), _cam((0, 0, 3)), _cam((3, 0, 0.1)),
            _cam((0, -3, 0.1))]
    won = visible_faces(mesh, cams, 0.01, 100.0)
    assert not won[-1]  # interior face never wins
    out = prune_faces(mesh, cams, 0.01, 100.0)
    assert len(out.faces) < len(F)
    # pruning must not change what any camera sees
    for cam in cams:
        a = rasterize(mesh, cam, 0.01, 100.0)
        b = rasterize(out, cam, 0.01, 100.0)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.point, b.point)
        assert np.array_equal(a.covered, b.covered)
