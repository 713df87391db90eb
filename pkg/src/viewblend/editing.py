"""Scene editing: external 2D edits made multi-view consistent.

Any image editor plugs in through EditorHook; each round applies it to
every source view, then re-renders every view from its edited neighbors
so the shared geometry pulls the per-view edits toward agreement. The
cross-view reconstruction error (rendered view vs the stored view it is
compared against) is the consistency measure and should fall over rounds.
"""

import os
import subprocess
import tempfile

import numpy as np

from . import scene as sc
from .autodiff import no_grad
from .renderer import build_condition, render_view
from .training import TrainScene, select_sources


class EditorHook:
    """(image, instruction) -> edited image of identical shape.

    Either an in-process callable or an external command. The command is
    run as ``argv... in.png out.png instruction``, so any standalone
    editor (including a diffusion model behind a script) slots in without
    this package importing it.
    """

    def __init__(self, fn=None, command=None):
        if (fn is None) == (command is None):
            raise ValueError("give exactly one of fn or command")
        self.fn = fn
        self.command = list(command) if command else None

    def __call__(self, image, instruction):
        image = np.asarray(image, dtype=np.float64)
        if self.fn is not None:
            out = np.asarray(self.fn(image, instruction), dtype=np.float64)
        else:
            with tempfile.TemporaryDirectory() as td:
                src = os.path.join(td, "in.png")
                dst = os.path.join(td, "out.png")
                sc.write_png(src, image)
                subprocess.run(self.command + [src, dst, str(instruction)],
                               check=True)
                out = sc.read_png(dst)
        if out.shape != image.shape:
            raise ValueError(
                f"editor changed image shape {image.shape} -> {out.shape}")
        return out


def invert_hook():
    """The stock test editor: per-channel color inversion."""
    return EditorHook(fn=lambda img, _instruction: 1.0 - img)


def identity_hook():
    return EditorHook(fn=lambda img, _instruction: img)


def _reconstruct(model, views, bbox, n_source, K, chunk):
    """Render every view from its n nearest other views. Returns
    (rendered ViewImages, mean |render - stored| per view)."""
    recon, errs = [], []
    with no_grad():
        for i, view in enumerate(views):
            src = select_sources(views, i, n_source)
            cond = build_condition(model, [views[j] for j in src], bbox)
            img = render_view(cond, view.camera, channels=("rgb",), K=K,
                              chunk=chunk)["rgb"]
            recon.append(sc.ViewImage(img, view.camera))
            errs.append(float(np.mean(np.abs(img - view.pixels))))
    return recon, float(np.median(errs))


def cross_view_error(model, rec, n_source=4, K=64, chunk=1024):
    """Median over views of mean |rendered-from-neighbors - stored|."""
    _, err = _reconstruct(model, rec.views, rec.bbox, n_source, K, chunk)
    return err


def edit_scene(model, rec, instruction, hook, rounds, n_source=4, K=64,
               chunk=1024):
    """Iterate 2D edits and cross-view reconstruction.

    Per round: every stored view goes through the hook, then every view
    is re-rendered from its edited neighbors; the renders become the
    stored views of the next round. Returns (edited TrainScene, per-round
    cross-view errors) where each error compares that round's renders to
    the edited views they were reconstructed from.
    """
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    views = list(rec.views)
    errors = []
    for _ in range(rounds):
        edited = [sc.ViewImage(hook(v.pixels, instruction), v.camera)
                  for v in views]
        views, err = _reconstruct(model, edited, rec.bbox, n_source, K,
                                  chunk)
        errors.append(err)
    out = TrainScene(views=views, depths=rec.depths, labels=rec.labels,
                     bbox=rec.bbox, name=rec.name)
    return out, errors
