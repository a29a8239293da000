"""Ten-seed ablation on the default benchmark; prints the four-row table.

    python3 scripts/ablation_sweep.py [--seeds 10] [--out runs/ablation]

Equivalent to ``drive ablate --config configs/rotated_gaussians_5.txt
--seeds 0,...,9`` but also reports the per-seed spread of adapted minus
source-only accuracy.
"""

import argparse
import statistics
from pathlib import Path

from drive.config import load_config
from drive.experiment import ABLATION_ORDER, read_summary, run_ablation

ROOT = Path(__file__).resolve().parents[1]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "rotated_gaussians_5.txt")
    ap.add_argument("--seeds", type=int, default=10)
    ap.add_argument("--out", default="runs/ablation")
    args = ap.parse_args()

    cfg = load_config(args.config)
    cfg.seeds = list(range(args.seeds))
    cfg.out = args.out
    table, holds = run_ablation(cfg)
    print(f"{'variant':<18}{'mean %':>9}{'std':>7}{'gain':>8}")
    for t in table:
        print(f"{t['variant']:<18}{t['mean']:>9.2f}{t['std']:>7.2f}{t['mean'] - t['source_mean']:>8.2f}")
    print("ordering holds" if holds else "ordering FAILS")

    rows = read_summary(Path(args.out) / "summary.csv")
    for variant in ABLATION_ORDER:
        gains = [100 * (float(r["adapted_accuracy"]) - float(r["source_accuracy"]))
                 for r in rows if r["variant"] == variant]
        print(f"{variant:<18} per-seed gain min {min(gains):.2f} max {max(gains):.2f} "
              f"median {statistics.median(gains):.2f}")


if __name__ == "__main__":
    main()
