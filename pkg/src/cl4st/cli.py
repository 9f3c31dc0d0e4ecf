"""``cl4st`` command-line entry point."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .data import DataLoadError
from .harness import ConfigError, cmd_ablate, cmd_evaluate, cmd_export, cmd_train, VARIANTS
from .synth import write_synthetic, write_synthetic_grid


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cl4st", description="Spatio-temporal meta contrastive learning")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model from a JSON config")
    t.add_argument("--config", required=True)

    e = sub.add_parser("evaluate", help="evaluate a checkpoint on the test split")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--missing-rate", type=float, default=None)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--density-bins", action="store_true")
    e.add_argument("--out", default=None)

    a = sub.add_parser("ablate", help="train and evaluate one ablation variant")
    a.add_argument("--config", required=True)
    a.add_argument("--variant", required=True, choices=VARIANTS)

    x = sub.add_parser("export", help="export attention matrices or sampled augmentations")
    x.add_argument("--ckpt", required=True)
    x.add_argument("--what", required=True, choices=("attention", "augmentations"))
    x.add_argument("--sample", type=int, required=True)
    x.add_argument("--data", default=None)
    x.add_argument("--out", default=None)
    x.add_argument("--seed", type=int, default=0)

    s = sub.add_parser("synth", help="write a synthetic dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--nodes", type=int, default=64)
    s.add_argument("--steps", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--grid", default=None, metavar="IxJ",
                   help="write a crime-style grid dataset of this shape instead")
    s.add_argument("--csv", action="store_true", help="write signals.csv instead of signals.bin")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "train":
            report = cmd_train(args.config)
        elif args.command == "ablate":
            report = cmd_ablate(args.config, args.variant)
        elif args.command == "evaluate":
            report = cmd_evaluate(args.ckpt, args.data, args.missing_rate, args.seed,
                                  args.density_bins, args.out)
        elif args.command == "export":
            for path in cmd_export(args.ckpt, args.what, args.sample, args.data, args.out, args.seed):
                print(path)
            return 0
        else:
            if args.grid:
                rows, cols = (int(v) for v in args.grid.lower().split("x"))
                path = write_synthetic_grid(args.out, rows, cols, args.steps, args.seed)
            else:
                path = write_synthetic(args.out, args.nodes, args.steps, args.seed,
                                       binary=not args.csv)
            print(path)
            return 0
    except (ConfigError, DataLoadError, FileNotFoundError, ValueError, IndexError) as exc:
        print(f"cl4st {args.command}: error: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(report["metrics"] | {"variant": report["variant"]}, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
