"""TSDF fusion properties and depth-map baking."""

import numpy as np
import pytest

from viewblend.baking import (finetune_mesh_shader, fuse_depths, extract_mesh,
                              make_tsdf_grid, render_source_depths,
                              tsdf_integrate)
from viewblend.oracle import (AnalyticScene, chamfer, make_cameras,
                              render_ground_truth, sample_surface, scene_bbox)
from viewblend.renderer import SceneModel, build_condition
from viewblend.training import scene_from_oracle


def _unit_sphere_scene():
    return AnalyticScene([{"kind": "sphere", "center": np.zeros(3),
                           "radius": 1.0, "albedo": np.array([0.8, 0.3, 0.2]),
                           "label": 0}], bounds_half=1.2)


def _oracle_depths(scene, cams):
    return [render_ground_truth(scene, c)[1] for c in cams]


def test_integrate_same_map_twice_is_fixed_point():
    scene = _unit_sphere_scene()
    cams = make_cameras(n_views=2, width=32, height=32, seed=5)
    depth = _oracle_depths(scene, cams)[0]
    bbox = scene_bbox(scene)
    g1 = make_tsdf_grid(bbox, m=24)
    tsdf_integrate(g1, depth, cams[0])
    v_once, w_once = g1.values.copy(), g1.weights.copy()
    tsdf_integrate(g1, depth, cams[0])
    assert np.array_equal(g1.values, v_once)  # average of equal samples
    assert np.array_equal(g1.weights, 2.0 * w_once)


def test_voxel_far_behind_surface_untouched():
    # camera looking +z at a wall of depth 1; voxel at depth 1 + 2*tau
    from viewblend import scene as sc
    K = [[32.0, 0, 16], [0, 32.0, 16], [0, 0, 1]]
    cam = sc.look_at_camera(np.array([0.0, 0, -1.0]), np.zeros(3), K, 32, 32)
    depth = np.full((32, 32), 1.0)
    grid = make_tsdf_grid((np.array([-0.2, -0.2, 0.2]),
                           np.array([0.2, 0.2, 0.6])), m=8)
    # voxel centers z in (0.225, 0.575): camera depth 1.225+, all behind
    # the wall by more than tau = 3 * 0.05
    tsdf_integrate(grid, depth, cam)
    assert np.all(grid.weights == 0.0)
    assert np.all(grid.values == 0.0)


def test_running_average_matches_scalar_reference():
    rng = np.random.default_rng(7)
    vals = rng.uniform(-3.0, 3.0, size=40)
    tau = 1.3
    v = w = 0.0
    for s in vals:
        v = (w * v + np.clip(s / tau, -1, 1)) / (w + 1)
        w += 1
    assert abs(v - np.clip(vals / tau, -1, 1).mean()) < 1e-9


def test_fusion_order_independent():
    scene = _unit_sphere_scene()
    cams = make_cameras(n_views=6, width=32, height=32, seed=2)
    depths = _oracle_depths(scene, cams)
    bbox = scene_bbox(scene)
    g_fwd = fuse_depths(depths, cams, bbox, m=24)
    perm = [3, 0, 5, 1, 4, 2]
    g_perm = fuse_depths([depths[i] for i in perm], [cams[i] for i in perm],
                         bbox, m=24)
    assert np.array_equal(g_fwd.weights, g_perm.weights)
    assert np.max(np.abs(g_fwd.values - g_perm.values)) < 1e-6


def test_fuse_count_mismatch():
    with pytest.raises(ValueError):
        fuse_depths([np.ones((4, 4))], [], (np.zeros(3), np.ones(3)))


def test_unit_sphere_fusion_chamfer():
    scene = _unit_sphere_scene()
    cams = make_cameras(n_views=16, width=64, height=64, seed=9)
    depths = _oracle_depths(scene, cams)
    bbox = scene_bbox(scene)
    grid = fuse_depths(depths, cams, bbox, m=64)
    mesh = extract_mesh(grid)
    assert not mesh.is_empty
    surf = sample_surface(scene, 10_000, seed=4)
    voxel = grid.voxel_size
    assert chamfer(mesh.vertices, surf) < 2.0 * voxel
    r = np.linalg.norm(mesh.vertices, axis=1)
    assert r.max() < 1.0 + 3.0 * voxel  # no phantom sheets in shadow space


# ------------------------------------------------- depth baking via renderer


@pytest.fixture(scope="module")
def tiny_cond():
    from viewblend.oracle import make_scene
    scene = make_scene(19)
    cams = make_cameras(n_views=4, width=20, height=20, seed=19)
    rec = scene_from_oracle(scene, cams, name="bake")
    model = SceneModel(np.random.default_rng(1), c_feat=4, c_vol=4,
                       d_model=8, blocks=1, heads=2, grid=8)
    from viewblend.autodiff import no_grad
    with no_grad():
        cond = build_condition(model, rec.views[:3], rec.bbox)
    return cond, [v.camera for v in rec.views[:3]]


def test_source_depths_shape_and_misses(tiny_cond):
    cond, cams = tiny_cond
    depths = render_source_depths(cond, cams, K=8)
    assert len(depths) == 3
    for d in depths:
        assert d.shape == (20, 20)
        hits = np.isfinite(d)
        if hits.any():
            assert d[hits].min() > 0.0


def test_source_depths_deterministic(tiny_cond):
    cond, cams = tiny_cond
    a = render_source_depths(cond, cams[:1], K=8)[0]
    b = render_source_depths(cond, cams[:1], K=8)[0]
    assert np.array_equal(a, b)


# ------------------------------------------------------------- finetuning


@pytest.fixture(scope="module")
def finetune_setup(tiny_cond):
    """Sphere mesh centered in the condition bbox, visible from all views."""
    from viewblend.mesh import marching_cubes
    cond, _ = tiny_cond
    lo = np.asarray(cond.bbox[0], float)
    hi = np.asarray(cond.bbox[1], float)
    mid = (lo + hi) / 2
    r = 0.6 * ((hi - lo) / 2).min()
    m = 20
    ax = [lo[a] + (np.arange(m) + 0.5) * (hi[a] - lo[a]) / m for a in range(3)]
    X, Y, Z = np.meshgrid(*ax, indexing="ij")
    vals = np.sqrt((X - mid[0]) ** 2 + (Y - mid[1]) ** 2
                   + (Z - mid[2]) ** 2) - r
    mesh = marching_cubes(vals, cond.bbox)
    assert not mesh.is_empty
    return mesh, cond


def _snapshot(model):
    return {k: v.copy() for k, v in model.state_arrays().items()}


def test_finetune_zero_budget_returns_inputs(finetune_setup):
    mesh, cond = finetune_setup
    before = _snapshot(cond.model)
    out_mesh, out_model, curve = finetune_mesh_shader(mesh, cond, cond.views,
                                                      steps=0)
    assert out_mesh is mesh
    assert curve == []
    after = out_model.state_arrays()
    assert all(np.array_equal(before[k], after[k]) for k in before)


def test_finetune_needs_budget(finetune_setup):
    mesh, cond = finetune_setup
    with pytest.raises(ValueError):
        finetune_mesh_shader(mesh, cond, cond.views)


def test_finetune_empty_mesh_rejected(tiny_cond):
    from viewblend.mesh import TriMesh
    cond, _ = tiny_cond
    with pytest.raises(ValueError):
        finetune_mesh_shader(TriMesh.empty(), cond, cond.views, steps=5)


def test_finetune_loss_descends(finetune_setup):
    # shader-only; sliding 50-step window medians must never increase
    mesh, cond = finetune_setup
    before = _snapshot(cond.model)
    try:
        _, _, curve = finetune_mesh_shader(mesh, cond, cond.views, steps=120,
                                           tune_vertices=False, lr=2e-3,
                                           pixels_per_step=96, seed=3)
        losses = np.array([l for _, l in curve])
        assert losses.size == 120
        meds = np.array([np.median(losses[i:i + 50])
                         for i in range(losses.size - 50 + 1)])
        assert np.all(np.diff(meds) <= 1e-12)
        assert np.median(losses[-20:]) < np.median(losses[:20])
    finally:
        cond.model.load_state_arrays(before)


def test_finetune_vertex_step_clamped(finetune_setup):
    mesh, cond = finetune_setup
    before = _snapshot(cond.model)
    try:
        out, _, curve = finetune_mesh_shader(mesh, cond, cond.views, steps=1,
                                             tune_vertices=True, voxel=1e-5,
                                             pixels_per_step=64, prune=False,
                                             seed=0)
        assert len(curve) == 1
        delta = np.abs(out.vertices - mesh.vertices)
        assert delta.max() <= 0.5 * 1e-5 * (1 + 1e-9)
        assert delta.max() > 0.0
    finally:
        cond.model.load_state_arrays(before)


def test_finetune_joint_with_pruning(finetune_setup):
    mesh, cond = finetune_setup
    before = _snapshot(cond.model)
    try:
        out, _, curve = finetune_mesh_shader(mesh, cond, cond.views,
                                             steps=2 * len(cond.views),
                                             tune_vertices=True,
                                             pixels_per_step=64, seed=1)
        assert len(curve) == 2 * len(cond.views)
        assert np.all(np.isfinite(out.vertices))
        assert 0 < len(out.faces) <= len(mesh.faces)
    finally:
        cond.model.load_state_arrays(before)


def test_finetune_seconds_budget_stops(finetune_setup):
    mesh, cond = finetune_setup
    before = _snapshot(cond.model)
    try:
        _, _, curve = finetune_mesh_shader(mesh, cond, cond.views,
                                           seconds=1.0, tune_vertices=False,
                                           pixels_per_step=32, seed=2)
        assert len(curve) >= 1
    finally:
        cond.model.load_state_arrays(before)
