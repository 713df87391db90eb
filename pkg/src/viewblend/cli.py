"""Command line front end.

Verbs: gen-scene, train, pet, render, bake, rt, export, serve, edit.
Exit codes: 0 ok, 1 user error (bad arguments, missing or invalid
files), 2 internal error. All checkpoints assume the default model
architecture; a blob from a differently-sized model is rejected when
its shapes fail to load.
"""

import argparse
import json
import shlex
import sys
import traceback

import numpy as np

from . import scene as sc
from .autodiff.checkpoint import load_blob, save_blob
from .baking import bake_mesh, finetune_mesh_shader
from .bundle import export_bundle, load_dataset, write_dataset
from .editing import EditorHook, edit_scene, identity_hook, invert_hook
from .mesh import read_ply, write_ply
from .oracle import make_cameras, make_scene
from .raster import render_realtime
from .renderer import SceneModel, build_condition, lift_property, render_view
from .service import BundleService
from .training import (TrainConfig, attach_adapters, pet_train,
                       scene_from_oracle, train, write_curve)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; our contract reserves 2 for bugs
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_model(ckpt):
    model = SceneModel(np.random.default_rng(0))
    model.load_state_arrays(load_blob(ckpt))
    return model


def _nearest_views(views, center, n):
    d = [float(np.linalg.norm(v.camera.center - center)) for v in views]
    order = np.argsort(np.asarray(d), kind="stable")[:n]
    return [views[i] for i in order]


def _camera_from_file(path):
    with open(path) as f:
        return sc.Camera.from_json(f.read())


# ------------------------------------------------------------------ verbs

def cmd_gen_scene(args):
    scene = make_scene(args.seed)
    cams = make_cameras(n_views=args.views, width=args.size,
                        height=args.size, seed=args.seed)
    rec = scene_from_oracle(scene, cams, name=f"scene-{args.seed}")
    write_dataset(rec, args.out)
    print(f"wrote {args.views} views to {args.out}")
    return 0


def cmd_train(args):
    scenes = [load_dataset(d) for d in args.scenes]
    cfg = TrainConfig(rays_per_batch=args.rays, scenes_per_batch=args.batch,
                      n_source_views=args.sources, k_samples=args.k,
                      lr=args.lr, lr_min=args.lr_min, steps=args.steps,
                      beta_depth=args.beta, seed=args.seed,
                      checkpoint_every=args.checkpoint_every)
    model = SceneModel(np.random.default_rng(args.seed))
    if args.init:
        model.load_state_arrays(load_blob(args.init))
    _, curve = train(cfg, scenes, model=model, log_path=args.curve,
                     ckpt_path=args.out)
    print(f"trained {args.steps} steps, final loss {curve[-1][3]:.6g}, "
          f"checkpoint {args.out}")
    return 0


def cmd_pet(args):
    if args.task != "labels":
        raise ValueError(f"unknown PET task {args.task!r}")
    model = _load_model(args.ckpt)
    scenes = [load_dataset(d) for d in args.scenes]
    wrapped = attach_adapters(model, rank=args.rank, seed=args.seed)
    curve = pet_train(model, wrapped, scenes, steps=args.steps,
                      rays=args.rays, K=args.k, seed=args.seed,
                      log_path=args.curve)
    adapters = {name: arr for name, arr in model.state_arrays().items()
                if "lora_" in name}
    save_blob(args.out, adapters)
    ratio = curve[-1][1] / max(curve[0][1], 1e-30) if curve else 1.0
    print(f"task loss ratio {ratio:.4f} after {args.steps} steps; "
          f"adapters in {args.out}")
    return 0


def cmd_render(args):
    rec = load_dataset(args.scene)
    model = _load_model(args.ckpt)
    camera = _camera_from_file(args.camera)
    srcs = _nearest_views(rec.views, camera.center, args.sources)
    cond = build_condition(model, srcs, rec.bbox)
    out = render_view(cond, camera, channels=("rgb", "depth"), K=args.k)
    sc.write_png(args.out, out["rgb"])
    if args.depth:
        sc.write_raw(args.depth, out["depth"].astype(np.float32))
    if args.lift:
        priors = [sc.read_raw(f"{args.lift}/{i:03d}.f32")
                  for i in range(len(rec.views))]
        idx = [rec.views.index(v) for v in srcs]
        lifted = lift_property(cond, [priors[i] for i in idx], camera,
                               K=args.k)
        sc.write_raw(args.out + ".lift.f32", lifted.astype(np.float32))
    print(f"rendered {args.out}")
    return 0


def _parse_budget(text):
    """'300s' -> seconds budget, '500' -> step budget."""
    if text.endswith("s"):
        return None, float(text[:-1])
    return int(text), None


def cmd_bake(args):
    rec = load_dataset(args.scene)
    model = _load_model(args.ckpt)
    srcs = rec.views[:args.sources]
    cams = [v.camera for v in rec.views]
    cond = build_condition(model, srcs, rec.bbox)
    mesh, _grid = bake_mesh(cond, cams, m=args.grid, K=args.k,
                            prune_cameras=cams)
    if mesh.is_empty:
        raise ValueError("baked mesh is empty; is the checkpoint trained?")
    if args.finetune:
        steps, seconds = _parse_budget(args.finetune)
        mesh, _, _ = finetune_mesh_shader(mesh, cond, rec.views, steps=steps,
                                          seconds=seconds)
    write_ply(args.out, mesh)
    print(f"baked {len(mesh.faces)} faces to {args.out}")
    return 0


def cmd_rt(args):
    mesh = read_ply(args.mesh)
    rec = load_dataset(args.scene)
    model = _load_model(args.ckpt)
    camera = _camera_from_file(args.camera)
    srcs = _nearest_views(rec.views, camera.center, args.sources)
    cond = build_condition(model, srcs, rec.bbox)
    image, timing = render_realtime(mesh, cond, camera, args.near, args.far,
                                    threads=args.threads)
    sc.write_png(args.out, image)
    if args.timing:
        with open(args.timing, "w") as f:
            f.write("geometry_ms,raster_ms,shade_ms,total_ms,fps\n")
            f.write(f"{timing.geometry_ms:.3f},{timing.raster_ms:.3f},"
                    f"{timing.shade_ms:.3f},{timing.total_ms:.3f},"
                    f"{timing.fps:.2f}\n")
    print(f"frame {args.out}: {timing.fps:.1f} fps "
          f"({timing.total_ms:.1f} ms)")
    return 0


def cmd_export(args):
    mesh = read_ply(args.mesh)
    rec = load_dataset(args.scene)
    model = _load_model(args.ckpt)
    views = rec.views if args.views is None else rec.views[:args.views]
    cond = build_condition(model, views, rec.bbox)
    bundle = export_bundle(mesh, cond, args.out, near=args.near,
                           far=args.far)
    print(f"bundle at {bundle.root}: {bundle.meta['n_views']} views, "
          f"format {bundle.meta['format_version']}")
    return 0


def cmd_serve(args):
    svc = BundleService(args.bundle, host=args.host, port=args.port)
    print(f"serving {args.bundle} on http://{args.host}:{svc.port}")
    try:
        svc.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_edit(args):
    rec = load_dataset(args.scene)
    model = _load_model(args.ckpt)
    if args.hook:
        hook = EditorHook(command=shlex.split(args.hook))
    elif args.invert:
        hook = invert_hook()
    else:
        hook = identity_hook()
    out, errors = edit_scene(model, rec, args.instruction, hook,
                             rounds=args.rounds, n_source=args.sources,
                             K=args.k)
    write_dataset(out, args.out)
    for i, e in enumerate(errors):
        print(f"round {i + 1}: cross-view error {e:.5f}")
    return 0


# ------------------------------------------------------------- the parser

def build_parser():
    p = _Parser(prog="viewblend",
                description="sparse-view reconstruction, baking, real-time "
                            "rendering and editing over synthetic scenes")
    sub = p.add_subparsers(dest="verb", required=True, metavar="VERB")

    g = sub.add_parser("gen-scene", help="emit a synthetic dataset")
    g.add_argument("--seed", type=int, required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--views", type=int, default=16)
    g.add_argument("--size", type=int, default=64)
    g.set_defaults(func=cmd_gen_scene)

    t = sub.add_parser("train", help="optimize a model on datasets")
    t.add_argument("--scenes", nargs="+", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--steps", type=int, default=2000)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--rays", type=int, default=1024)
    t.add_argument("--batch", type=int, default=2)
    t.add_argument("--sources", type=int, default=4)
    t.add_argument("--k", type=int, default=64)
    t.add_argument("--lr", type=float, default=5e-4)
    t.add_argument("--lr-min", type=float, default=1e-5)
    t.add_argument("--beta", type=float, default=1.0)
    t.add_argument("--curve", default=None)
    t.add_argument("--init", default=None)
    t.add_argument("--checkpoint-every", type=int, default=0)
    t.set_defaults(func=cmd_train)

    pe = sub.add_parser("pet", help="parameter-efficient adapter tuning")
    pe.add_argument("--ckpt", required=True)
    pe.add_argument("--scenes", nargs="+", required=True)
    pe.add_argument("--task", default="labels")
    pe.add_argument("--rank", type=int, default=4)
    pe.add_argument("--out", required=True)
    pe.add_argument("--steps", type=int, default=500)
    pe.add_argument("--rays", type=int, default=128)
    pe.add_argument("--k", type=int, default=32)
    pe.add_argument("--seed", type=int, default=0)
    pe.add_argument("--curve", default=None)
    pe.set_defaults(func=cmd_pet)

    r = sub.add_parser("render", help="volumetric render at a camera")
    r.add_argument("--scene", required=True)
    r.add_argument("--ckpt", required=True)
    r.add_argument("--camera", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--depth", default=None)
    r.add_argument("--lift", default=None,
                   help="dir of per-view property maps (NNN.f32); lifted "
                        "map written next to --out")
    r.add_argument("--sources", type=int, default=4)
    r.add_argument("--k", type=int, default=64)
    r.set_defaults(func=cmd_render)

    b = sub.add_parser("bake", help="fuse depths to a pruned mesh")
    b.add_argument("--ckpt", required=True)
    b.add_argument("--scene", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--finetune", default=None, metavar="BUDGET",
                   help="steps (e.g. 500) or seconds (e.g. 300s)")
    b.add_argument("--grid", type=int, default=64)
    b.add_argument("--sources", type=int, default=4)
    b.add_argument("--k", type=int, default=64)
    b.set_defaults(func=cmd_bake)

    rt = sub.add_parser("rt", help="rasterize one frame in real time")
    rt.add_argument("--mesh", required=True)
    rt.add_argument("--scene", required=True)
    rt.add_argument("--ckpt", required=True)
    rt.add_argument("--camera", required=True)
    rt.add_argument("--out", required=True)
    rt.add_argument("--timing", default=None)
    rt.add_argument("--near", type=float, default=1e-3)
    rt.add_argument("--far", type=float, default=1e3)
    rt.add_argument("--threads", type=int, default=None)
    rt.add_argument("--sources", type=int, default=4)
    rt.set_defaults(func=cmd_rt)

    e = sub.add_parser("export", help="write a deployable scene bundle")
    e.add_argument("--mesh", required=True)
    e.add_argument("--scene", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--views", type=int, default=None)
    e.add_argument("--near", type=float, default=0.05)
    e.add_argument("--far", type=float, default=10.0)
    e.set_defaults(func=cmd_export)

    s = sub.add_parser("serve", help="HTTP service over a bundle")
    s.add_argument("--bundle", required=True)
    s.add_argument("--port", type=int, default=8731)
    s.add_argument("--host", default="127.0.0.1")
    s.set_defaults(func=cmd_serve)

    ed = sub.add_parser("edit", help="edit views and re-reconstruct")
    ed.add_argument("--scene", required=True)
    ed.add_argument("--ckpt", required=True)
    ed.add_argument("--out", required=True)
    ed.add_argument("--instruction", default="")
    ed.add_argument("--rounds", type=int, default=1)
    ed.add_argument("--hook", default=None,
                    help="external editor command; called with "
                         "IN.png OUT.png INSTRUCTION appended")
    ed.add_argument("--invert", action="store_true",
                    help="use the built-in color inversion hook")
    ed.add_argument("--sources", type=int, default=4)
    ed.add_argument("--k", type=int, default=64)
    ed.set_defaults(func=cmd_edit)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError, NotADirectoryError,
            PermissionError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except BrokenPipeError:
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
