"""Evaluate a trained checkpoint with 0/10/30/50% of input entries zeroed.

Writes missing_rates.csv and missing_rates.png next to the checkpoint.

    python scripts/missing_data_study.py --ckpt runs/synth/full/best.ckpt --data runs/synth/data
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from cl4st.harness import cmd_evaluate


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--rates", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5])
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    out_dir = Path(args.ckpt).parent
    rows = []
    for rate in args.rates:
        report = cmd_evaluate(args.ckpt, args.data, missing_rate=rate, seed=args.seed,
                              out=out_dir / f"eval_missing_{rate:g}.json")
        m = report["metrics"]
        rows.append({"missing_rate": rate, "mae": m["mae"], "rmse": m["rmse"],
                     "mape_percent": m["mape_percent"]})
        print(f"rate {rate:.2f}  mae {m['mae']:.4f}  rmse {m['rmse']:.4f}")

    with open(out_dir / "missing_rates.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        w.writerows(rows)
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.plot([r["missing_rate"] for r in rows], [r["mae"] for r in rows], marker="o")
    ax.set_xlabel("missing rate")
    ax.set_ylabel("test MAE")
    fig.tight_layout()
    fig.savefig(out_dir / "missing_rates.png", dpi=100)


if __name__ == "__main__":
    main()
