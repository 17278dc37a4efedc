"""Command line entry point for the pose-and-shape pipeline.

Subcommands walk the pipeline in order: gen-dataset, fit-triplanes,
train-denoiser (per stage), estimate, eval. `inspect` prints a summary of
any artifact file. Exit codes: 0 success, 2 validation problems, 3 runtime
failures (training divergence, failed registration).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .errors import (
    DivergenceError,
    ProbShapeError,
    RegistrationFailedError,
    UsageError,
)
from . import pipeline


def _add_config(sub):
    sub.add_argument("--config", required=True, help="YAML run configuration")


def cmd_gen_dataset(args):
    cfg = load_config(args.config)
    pipeline.generate_dataset(cfg)
    print(f"dataset written to {cfg.dataset_dir}")


def cmd_fit_triplanes(args):
    cfg = load_config(args.config)
    lib, _ = pipeline.fit_library(cfg)
    print(f"library of {len(lib.triplanes)} fields written to {cfg.checkpoint_dir}")


def cmd_train_denoiser(args):
    cfg = load_config(args.config)
    pipeline.train_stage(cfg, args.stage)
    print(f"{args.stage} denoiser written to {cfg.checkpoint_dir}")


def cmd_estimate(args):
    cfg = load_config(args.config)
    models = pipeline.load_models(cfg)
    if args.view:
        obj_id, tag = args.view.split("/")
        m, cam, obs = pipeline.load_view(cfg, obj_id, tag)
        out = cfg.estimate_dir / obj_id / tag
        depth = None if args.no_depth else m
        n = args.hypotheses or cfg.eval.n_hypotheses
        hyps = pipeline.estimate_view(
            cfg, models, obs, cam, depth, n, args.seed, out_dir=out
        )
        ok = sum(h.ok for h in hyps)
        print(f"{args.view}: {ok}/{len(hyps)} hypotheses ok, artifacts in {out}")
    else:
        pipeline.estimate_all(cfg, models=models)
        print(f"estimates written to {cfg.estimate_dir}")


def cmd_eval(args):
    cfg = load_config(args.config)
    report = pipeline.evaluate(cfg)
    print(
        "chamfer: first {0:.4f}, best-of-{1} {2:.4f}, selected {3:.4f}".format(
            report["first_hypothesis_chamfer"],
            report["n_hypotheses"],
            report["best_of_n_chamfer"],
            report["selected_chamfer"],
        )
    )
    print(f"report written to {cfg.report_dir / 'eval.json'}")


def cmd_inspect(args):
    path = Path(args.path)
    if not path.exists():
        raise UsageError(f"{path} does not exist")
    if path.suffix == ".json":
        with open(path) as f:
            print(json.dumps(json.load(f), indent=2, sort_keys=True))
    elif path.suffix == ".tpl":
        from .triplane import load_triplane

        z, ref = load_triplane(path)
        print(f"triplane p={z.p} n={z.n} side={2 ** z.p}")
        for name, plane in zip(("XY", "XZ", "YZ"), z.planes):
            print(f"  {name}: min {plane.min():.4f} max {plane.max():.4f}")
        print(f"  ref_std: {np.array2string(ref, precision=4)}")
    elif path.suffix == ".ply":
        from .ply import load_ply

        verts, faces, normals = load_ply(path)
        print(f"mesh: {len(verts)} vertices, {len(faces)} faces, "
              f"normals={'yes' if normals is not None else 'no'}")
    elif path.suffix == ".nnc":
        from .nn import load_mlp

        net = load_mlp(path)
        print(f"mlp widths: {net.layer_widths}")
    elif path.suffix == ".npz":
        data = np.load(path)
        for key in sorted(data.files):
            if key == "__meta__":
                print(f"  meta: {bytes(data[key]).decode()}")
            else:
                print(f"  {key}: {data[key].shape} {data[key].dtype}")
    elif path.suffix == ".bin":
        raw = np.fromfile(path, dtype="<f4")
        print(f"raw float32 blob: {len(raw)} values, "
              f"range [{raw.min():.4f}, {raw.max():.4f}]")
    else:
        raise UsageError(f"don't know how to inspect {path.suffix!r} files")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="probshape",
        description="probabilistic pose-and-shape estimation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("gen-dataset", help="render the procedural training corpus")
    _add_config(s)
    s.set_defaults(func=cmd_gen_dataset)

    s = sub.add_parser("fit-triplanes", help="fit the triplane field library")
    _add_config(s)
    s.set_defaults(func=cmd_fit_triplanes)

    s = sub.add_parser("train-denoiser", help="train one diffusion stage")
    _add_config(s)
    s.add_argument("--stage", choices=("norf", "shape"), required=True)
    s.set_defaults(func=cmd_train_denoiser)

    s = sub.add_parser("estimate", help="sample hypotheses for held-out views")
    _add_config(s)
    s.add_argument("--view", help="single view as obj_000/hold_00 (default: all)")
    s.add_argument("--hypotheses", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--no-depth", action="store_true", help="skip registration")
    s.set_defaults(func=cmd_estimate)

    s = sub.add_parser("eval", help="aggregate estimates into a report")
    _add_config(s)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", help="print a summary of an artifact file")
    s.add_argument("path")
    s.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (DivergenceError, RegistrationFailedError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except ProbShapeError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
