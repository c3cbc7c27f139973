"""Command-line interface: ``sphere-ssc {gen,features,fit,eval,export,check-grad}``.

Exit codes: 0 success, 1 failed gradient check or unexpected error,
2 invalid input, 3 numeric divergence, 4 I/O failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import FitConfig, read_config
from .errors import InvalidInputError, SphereError, SphereIOError
from .io import (
    KITTI_CLASSES,
    SceneFile,
    export_ply,
    gaussians_to_ply,
    read_gaussians,
    read_scene,
    scene_to_ply,
    write_metrics,
    write_scene,
)
from .metrics import compute_metrics
from .pipeline import gradient_check_problem, run_pipeline, thread_limit
from .synth import MINI_STREET_CLASSES, PRESETS, gen_features, gen_scene

log = logging.getLogger("sphere_ssc")

PALETTES = {"mini-street": MINI_STREET_CLASSES, "kitti": KITTI_CLASSES}
GRAD_TOLERANCE = 1e-4


def _load_config(args) -> FitConfig:
    config = read_config(args.config) if getattr(args, "config", None) else FitConfig()
    overrides = {}
    for flag, key in (("seed", "seed"), ("k", "k"), ("sh_degree", "sh_degree"), ("sim_mode", "sim_mode"), ("iterations", "iterations")):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    return config.replace(**overrides) if overrides else config


def cmd_gen(args):
    if args.primitives:
        try:
            source = json.loads(Path(args.primitives).read_text())
        except OSError as exc:
            raise SphereIOError(f"cannot read {args.primitives}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"primitive file is not valid JSON: {exc}") from exc
        labels, grid, n = gen_scene(source, args.seed or 0, dims=tuple(args.dims), resolution=args.resolution)
    else:
        labels, grid, n = gen_scene(args.preset, args.seed or 0)
    write_scene(args.out, SceneFile(grid, "labels", n, labels))
    print(f"wrote {args.out}: dims {grid.dims}, {int(np.count_nonzero(labels))} occupied voxels")


def cmd_features(args):
    config = _load_config(args)
    scene = read_scene(args.scene)
    if scene.kind != "labels":
        raise InvalidInputError("features need a labels scene")
    feats = gen_features(scene.payload, scene.n_semantic + 1, config.feature_channels, config.noise_sigma, config.seed)
    try:
        np.save(args.out, feats)
    except OSError as exc:
        raise SphereIOError(f"cannot write {args.out}: {exc}") from exc
    print(f"wrote {args.out}: shape {feats.shape}")


def cmd_fit(args):
    config = _load_config(args)
    res = run_pipeline(args.scene, config, args.out, deterministic=args.deterministic)
    print(f"K = {res.problem.k}, iterations = {len(res.fit.records) - 1}")
    print(f"fused mIoU {res.initial_metrics.miou:.4f} -> {res.metrics.miou:.4f}")
    print(f"fused occupancy IoU {res.initial_metrics.occ_iou:.4f} -> {res.metrics.occ_iou:.4f}")
    print(f"gaussian-branch occupancy IoU {res.initial_gauss_metrics.occ_iou:.4f} -> {res.gauss_metrics.occ_iou:.4f}")
    if args.out:
        print(f"outputs in {args.out}")


def cmd_eval(args):
    gt = read_scene(args.scene)
    pred = read_scene(args.pred)
    if gt.kind != "labels":
        raise InvalidInputError("ground truth must be a labels scene")
    if pred.kind == "scalar":
        raise InvalidInputError("cannot score a scalar scene")
    n_classes = max(gt.n_semantic, pred.n_semantic) + 1
    report = compute_metrics(pred.payload, gt.payload, n_classes)
    if args.out:
        out = Path(args.out)
        write_metrics(report, out, out.with_suffix(".json"))
    sys.stdout.write(report.to_text())


def cmd_export(args):
    names = PALETTES[args.palette]
    if bool(args.scene) == bool(args.gaussians):
        raise InvalidInputError("export needs exactly one of --scene or --gaussians")
    if args.scene:
        scene = read_scene(args.scene)
        labels = scene.payload if scene.kind == "labels" else np.argmax(scene.payload, axis=-1) if scene.kind == "logits" else None
        if labels is None:
            raise InvalidInputError("cannot export a scalar scene")
        text = scene_to_ply(labels, scene.grid, names)
    else:
        gaussians, coeffs = read_gaussians(args.gaussians)
        text = gaussians_to_ply(gaussians, coeffs, names)
    export_ply(args.out, text)
    print(f"wrote {args.out}")


def cmd_check_grad(args):
    config = _load_config(args)
    from .fit import check_gradient

    with thread_limit(args.deterministic):
        problem, params = gradient_check_problem(config.seed, config)
        result = check_gradient(problem, params, n_coords=args.coords, step=args.step, seed=config.seed)
    print(f"coordinates checked: {len(result.coords)}")
    print(f"max relative error: {result.max_rel_error:.3e}")
    return 0 if result.max_rel_error < GRAD_TOLERANCE else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sphere-ssc", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, scene=True):
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--seed", type=int)
        if scene:
            p.add_argument("--scene", required=True, help="labels scene file (.sphv)")
        p.add_argument("--deterministic", action="store_true", help="single-threaded numerics")

    p = sub.add_parser("gen", help="rasterise a synthetic labelled scene")
    p.add_argument("--preset", default="mini-street", choices=sorted(PRESETS))
    p.add_argument("--primitives", help="JSON list of primitives (overrides --preset)")
    p.add_argument("--dims", type=int, nargs=3, default=(64, 64, 8))
    p.add_argument("--resolution", type=float, default=0.2)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("features", help="synthetic class-prototype feature volume (.npy)")
    common(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("fit", help="run the full pipeline and write artifacts")
    common(p)
    p.add_argument("--out", help="output directory")
    p.add_argument("--k", type=int)
    p.add_argument("--sh-degree", type=int)
    p.add_argument("--sim-mode", choices=("dot", "cosine"))
    p.add_argument("--iterations", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="score a prediction scene against ground truth")
    p.add_argument("--scene", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--out", help="metrics text file (JSON written alongside)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="ASCII PLY point cloud of a scene or Gaussian set")
    p.add_argument("--scene")
    p.add_argument("--gaussians")
    p.add_argument("--palette", choices=sorted(PALETTES), default="mini-street")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("check-grad", help="finite-difference check of the analytic gradient")
    common(p, scene=False)
    p.add_argument("--coords", type=int, default=64)
    p.add_argument("--step", type=float, default=1e-5)
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args) or 0
    except SphereError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return SphereIOError.exit_code


if __name__ == "__main__":
    sys.exit(main())
