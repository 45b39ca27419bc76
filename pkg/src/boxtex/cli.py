"""Command line interface.

    boxtex bake        fit boxes and bake atlases for a dataset
    boxtex train       run the staged training pipeline
    boxtex texture     sample textures for an existing shape
    boxtex generate    sample new textured shapes from scratch
    boxtex interpolate walk between two shapes in latent space
    boxtex render      ray-trace a textured output from the camera ring
    boxtex eval        seam / compatibility / multiview similarity metrics
    boxtex toy-data    write a procedural toy dataset

Configuration: `--profile` picks the base profile, `--config FILE` applies a
key=value file on top, and repeated `--set key=value` flags override single
fields. `boxtex train --dry-run` lists the seven stages.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline
from .config import (PROFILES, load_config_file, make_config, parse_config_text)


def _add_config_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--profile", default="desk", choices=sorted(PROFILES),
                   help="base hyperparameter profile")
    p.add_argument("--config", default=None, metavar="FILE",
                   help="key=value config file applied over the profile")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   dest="overrides", help="override one config field")
    p.add_argument("--run-dir", default=None, help="artifact directory")
    p.add_argument("--data-dir", default=None, help="dataset directory")
    p.add_argument("--category", default=None)
    p.add_argument("--seed", type=int, default=None)


def _build_config(args: argparse.Namespace):
    kv: dict = {}
    if args.config:
        kv.update(load_config_file(args.config))
    for item in args.overrides:
        kv.update(parse_config_text(item))
    for key in ("run_dir", "data_dir", "category", "seed"):
        val = getattr(args, key, None)
        if val is not None:
            kv[key] = val
    return make_config(args.profile, **kv)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="boxtex",
        description="part-aware textured box shapes: bake, train, sample, render")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bake", help="fit boxes and bake atlases")
    _add_config_args(p)

    p = sub.add_parser("train", help="run training stages in order")
    _add_config_args(p)
    p.add_argument("--stages", default=None,
                   help="comma-separated subset (default: all seven)")
    p.add_argument("--dry-run", action="store_true",
                   help="list the stages without running them")

    p = sub.add_parser("texture", help="sample textures for a shape")
    _add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--from-image", default=None, metavar="PHOTO",
                   help="not supported; see error message")

    p = sub.add_parser("generate", help="sample new textured shapes")
    _add_config_args(p)
    p.add_argument("--num-samples", type=int, default=1)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("interpolate", help="latent walk between two shapes")
    _add_config_args(p)
    p.add_argument("--manifest-a", required=True)
    p.add_argument("--manifest-b", required=True)
    p.add_argument("--steps", type=int, default=5)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("render", help="ray-trace a textured output")
    _add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--views", type=int, default=12)
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--out-dir", default=None)

    p = sub.add_parser("eval", help="texture metrics, optionally vs a reference")
    _add_config_args(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--against", default=None,
                   help="second manifest for multiview similarity")
    p.add_argument("--views", type=int, default=12)

    p = sub.add_parser("toy-data", help="write a procedural toy dataset")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--category", default="chair", choices=("chair", "table"))
    p.add_argument("--count", type=int, default=20)
    p.add_argument("--color-mode", default="shared",
                   choices=("shared", "per_part"))
    p.add_argument("--seed", type=int, default=0)

    args = ap.parse_args(argv)

    if args.command == "toy-data":
        import numpy as np
        from .synthetic import write_toy_dataset
        rng = np.random.default_rng(args.seed)
        manifests, _ = write_toy_dataset(args.out_dir, args.category,
                                         args.count, rng,
                                         color_mode=args.color_mode)
        print(f"wrote {len(manifests)} shapes under {args.out_dir}")
        return 0

    cfg = _build_config(args)
    try:
        if args.command == "bake":
            index = pipeline.cmd_bake(cfg)
            print(f"baked {len(index['shapes'])} shapes into "
                  f"{pipeline.run_paths(cfg).baked}")
        elif args.command == "train":
            stages = args.stages.split(",") if args.stages else None
            ran = pipeline.cmd_train(cfg, stages=stages, dry_run=args.dry_run)
            if not args.dry_run:
                print(f"completed stages: {', '.join(ran)}")
        elif args.command == "texture":
            if args.from_image:
                pipeline.image_guided(args.from_image)
            outs = pipeline.cmd_texture(cfg, args.manifest,
                                        num_samples=args.num_samples,
                                        temperature=args.temperature,
                                        seed=args.seed, out_dir=args.out_dir)
            for o in outs:
                print(o)
        elif args.command == "generate":
            outs = pipeline.cmd_generate(cfg, num_samples=args.num_samples,
                                         temperature=args.temperature,
                                         seed=args.seed, out_dir=args.out_dir)
            for o in outs:
                print(o)
        elif args.command == "interpolate":
            outs = pipeline.cmd_interpolate(cfg, args.manifest_a,
                                            args.manifest_b,
                                            steps=args.steps,
                                            out_dir=args.out_dir)
            for o in outs:
                print(o)
        elif args.command == "render":
            pipeline.cmd_render(cfg, args.manifest, out_dir=args.out_dir,
                                views=args.views, size=args.size)
        elif args.command == "eval":
            pipeline.cmd_eval(cfg, args.manifest, against=args.against,
                              views=args.views)
    except (pipeline.StageError, NotImplementedError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
