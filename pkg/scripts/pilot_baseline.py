"""Measure the source-only vs adapted margin on the default benchmark and freeze it.

Runs the full method (all components on) for seeds 0-4 and writes the per-seed
accuracies plus the mean margin (in accuracy points) to
``tests/pilot_baselines.json``; the acceptance suite holds later runs to
within one point of that margin.

    python3 scripts/pilot_baseline.py [--config configs/rotated_gaussians_5.txt]
"""

import argparse
import json
import statistics
import tempfile
import time
from pathlib import Path

from drive.config import load_config
from drive.experiment import run_experiment

ROOT = Path(__file__).resolve().parents[1]


def measure(config: Path, seeds: list[int]) -> dict:
    cfg = load_config(config)
    cfg.seeds = seeds
    cfg.variants = ["all-on"]
    with tempfile.TemporaryDirectory() as tmp:
        cfg.out = tmp
        t0 = time.perf_counter()
        rows = run_experiment(cfg)
        seconds = time.perf_counter() - t0
    src = [r["source_accuracy"] for r in rows]
    ada = [r["adapted_accuracy"] for r in rows]
    return {
        "config": str(config.relative_to(ROOT)),
        "seeds": seeds,
        "source_accuracy": src,
        "adapted_accuracy": ada,
        "mean_source_pct": 100 * statistics.fmean(src),
        "mean_adapted_pct": 100 * statistics.fmean(ada),
        "margin_pct": 100 * (statistics.fmean(ada) - statistics.fmean(src)),
        "seconds": round(seconds, 1),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", type=Path, default=ROOT / "configs" / "rotated_gaussians_5.txt")
    ap.add_argument("--out", type=Path, default=ROOT / "tests" / "pilot_baselines.json")
    ap.add_argument("--dry-run", action="store_true", help="print without writing")
    args = ap.parse_args()
    result = measure(args.config.resolve(), [0, 1, 2, 3, 4])
    text = json.dumps(result, indent=2) + "\n"
    print(text, end="")
    if not args.dry_run:
        args.out.write_text(text, encoding="utf-8")
        print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
