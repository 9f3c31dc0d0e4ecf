"""Train every ablation variant on one config and tabulate test metrics.

    python scripts/ablation_study.py --config runs/synth/config.json
"""
import argparse
import csv
import sys
from pathlib import Path

from cl4st.harness import VARIANTS, RunConfig, fit


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True)
    p.add_argument("--variants", nargs="+", default=list(VARIANTS), choices=VARIANTS)
    p.add_argument("--epochs", type=int, default=None, help="override train.max_epochs")
    p.add_argument("--out", default=None, help="default: <output_dir>/../ablation")
    args = p.parse_args()

    base = RunConfig.from_file(args.config)
    if args.epochs is not None:
        base.train.max_epochs = args.epochs
    out = Path(args.out) if args.out else Path(base.output_dir).parent / "ablation"
    rows = []
    for variant in args.variants:
        cfg = base.with_variant(variant)
        cfg.output_dir = str(out / variant)
        m = fit(cfg, "ablate")["metrics"]
        rows.append({"variant": variant, "mae": m["mae"], "rmse": m["rmse"],
                     "mape_percent": m["mape_percent"]})

    table = out / "ablation.csv"
    with open(table, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    w = csv.DictWriter(sys.stdout, fieldnames=list(rows[0]))
    w.writeheader()
    w.writerows(rows)


if __name__ == "__main__":
    main()
