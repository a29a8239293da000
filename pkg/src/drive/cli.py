"""Command line entry point: ``drive {run,ablate,report,gen-data}``.

Exit codes: 0 success, 1 configuration or input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config
from .data import generate, write_csv
from .experiment import ABLATION_ORDER, run_ablation, run_experiment
from .report import build_report

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2

log = logging.getLogger("drive")


def _seeds(raw: str) -> list[int]:
    try:
        return [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"--seeds expects comma-separated integers, got {raw!r}")


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "seeds", None):
        cfg.seeds = args.seeds
    if getattr(args, "variant", None):
        cfg.variants = [args.variant]
    cfg.validate()
    return cfg


def cmd_run(args) -> int:
    cfg = _load(args)
    rows = run_experiment(cfg)
    for r in rows:
        print(f"{r['run_id']}: source {r['source_accuracy']:.4f} -> adapted {r['adapted_accuracy']:.4f}")
    print(f"summary: {Path(cfg.out) / 'summary.csv'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    cfg = _load(args)
    table, holds = run_ablation(cfg)
    print(f"{'variant':<18}{'seeds':>6}{'mean %':>10}{'std':>8}")
    for t in table:
        print(f"{t['variant']:<18}{t['n_seeds']:>6}{t['mean']:>10.2f}{t['std']:>8.2f}")
    flag = "holds" if holds else "FAILS (flagged)"
    print(f"ordering {' -> '.join(ABLATION_ORDER)}: {flag}")
    return EXIT_OK


def cmd_report(args) -> int:
    src = Path(args.metrics)
    out = Path(args.out) if args.out else (src if src.name != "metrics" else src.parent) / "report"
    try:
        digest = build_report(src, out)
    except FileNotFoundError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    print(digest.read_text(encoding="utf-8"), end="")
    return EXIT_OK


def cmd_gen_data(args) -> int:
    cfg = _load(args)
    out = Path(args.out or cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    for seed in cfg.seeds:
        splits = generate(replace(cfg.data.spec, seed=seed))
        for part in splits:
            path = out / f"{part.split}-s{seed}.csv"
            write_csv(path, part)
            print(path)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drive", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, variant=False):
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--out", help="output directory (overrides run.out)")
        sp.add_argument("--seeds", type=_seeds, help="comma-separated seeds")
        if variant:
            sp.add_argument("--variant", choices=ABLATION_ORDER)

    common(sub.add_parser("run", help="pretrain and adapt for each seed x variant"), variant=True)
    common(sub.add_parser("ablate", help="run the four-row ablation grid"))
    common(sub.add_parser("gen-data", help="write source/target/broad CSVs"))
    rp = sub.add_parser("report", help="plots and digest from metrics files")
    rp.add_argument("metrics", help="metrics directory (or a run output directory)")
    rp.add_argument("--out", help="where to write plots (default: <run>/report)")
    return p


COMMANDS = {"run": cmd_run, "ablate": cmd_ablate, "report": cmd_report, "gen-data": cmd_gen_data}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # noqa: BLE001
        log.exception("run failed")
        print(f"runtime failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
