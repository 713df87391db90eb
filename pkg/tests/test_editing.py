"""Editor hooks and the edit/reconstruct loop."""

import numpy as np
import pytest

from viewblend.editing import (EditorHook, cross_view_error, edit_scene,
                               identity_hook, invert_hook)
from viewblend.oracle import make_cameras, make_scene
from viewblend.renderer import SceneModel
from viewblend.training import scene_from_oracle


@pytest.fixture(scope="module")
def edit_setup():
    scene = make_scene(29)
    cams = make_cameras(n_views=5, width=12, height=12, seed=29)
    rec = scene_from_oracle(scene, cams, name="edit")
    model = SceneModel(np.random.default_rng(7), c_feat=4, c_vol=4,
                       d_model=8, blocks=1, heads=2, grid=8)
    return model, rec


def test_hook_needs_exactly_one_backend():
    with pytest.raises(ValueError):
        EditorHook()
    with pytest.raises(ValueError):
        EditorHook(fn=lambda i, t: i, command=["true"])


def test_invert_hook_inverts():
    img = np.random.default_rng(0).random((4, 5, 3))
    out = invert_hook()(img, "whatever")
    assert np.allclose(out, 1.0 - img)


def test_hook_shape_change_rejected():
    hook = EditorHook(fn=lambda img, _t: img[:2])
    with pytest.raises(ValueError, match="shape"):
        hook(np.zeros((4, 4, 3)), "")


def test_subprocess_hook_round_trip(tmp_path):
    script = tmp_path / "invert.py"
    script.write_text(
        "#!/usr/bin/env python3\n"
        "import sys\n"
        "import numpy as np\n"
        "from PIL import Image\n"
        "a = np.asarray(Image.open(sys.argv[1]).convert('RGB'))\n"
        "Image.fromarray(255 - a).save(sys.argv[2])\n")
    hook = EditorHook(command=["python3", str(script)])
    # u8-grid input so PNG quantization is exact through the round trip
    img = (np.arange(4 * 4 * 3).reshape(4, 4, 3) % 256) / 255.0
    out = hook(img, "invert")
    assert np.allclose(out, 1.0 - img, atol=1e-12)


def test_rounds_zero_rejected(edit_setup):
    model, rec = edit_setup
    with pytest.raises(ValueError, match="rounds"):
        edit_scene(model, rec, "", identity_hook(), rounds=0)


def test_identity_round_is_deterministic(edit_setup):
    model, rec = edit_setup
    a, ea = edit_scene(model, rec, "", identity_hook(), rounds=1,
                       n_source=2, K=4)
    b, eb = edit_scene(model, rec, "", identity_hook(), rounds=1,
                       n_source=2, K=4)
    assert ea == eb
    for va, vb in zip(a.views, b.views):
        assert np.array_equal(va.pixels, vb.pixels)


def test_edit_outputs_preserve_structure(edit_setup):
    model, rec = edit_setup
    out, errors = edit_scene(model, rec, "invert", invert_hook(), rounds=2,
                             n_source=2, K=4)
    assert len(errors) == 2
    assert all(np.isfinite(e) for e in errors)
    assert len(out.views) == len(rec.views)
    assert out.name == rec.name
    for vo, vi in zip(out.views, rec.views):
        assert vo.pixels.shape == vi.pixels.shape
        assert vo.camera is vi.camera


def test_cross_view_error_is_scalar(edit_setup):
    model, rec = edit_setup
    err = cross_view_error(model, rec, n_source=2, K=4)
    assert np.isscalar(err) and err >= 0.0
