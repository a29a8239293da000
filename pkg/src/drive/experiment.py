"""Run seeds x variants end to end and write metrics, summaries and checkpoints."""

from __future__ import annotations

import csv
import json
import logging
import os
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from .adaptation import VARIANTS, AdaptationConfig, AdaptationReport, apply_variant, run
from .config import ExperimentConfig, dump_config
from .data import LabeledSet, generate, load_csv
from .models import (DenseNet, Parameter, PriorModel, net_tensors, pretrain_prior,
                     pretrain_source, save_checkpoint)
from .perturbation import default_radius

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
ABLATION_ORDER = ("all-off", "entropy", "entropy+perturb", "all-on")
TIE_TOLERANCE = 0.5  # accuracy points
SUMMARY_FIELDS = ("run_id", "seed", "variant", "entropy_weighting", "perturb", "dynamic_eta",
                  "source_accuracy", "adapted_accuracy")


@dataclass
class MetricsRecord:
    run_id: str
    seed: int
    variant: dict[str, bool]
    epoch: int
    stage: int
    losses: dict[str, float]
    target_accuracy: float
    eta: dict[str, float]
    wall_ms: float
    source_accuracy: float = 0.0
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, line: str) -> "MetricsRecord":
        raw = json.loads(line)
        if raw.get("schema_version") != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema version {raw.get('schema_version')!r}")
        return cls(**raw)


def variant_flags(cfg: AdaptationConfig) -> dict[str, bool]:
    return {"entropy_weighting": cfg.entropy_weighting, "perturb": cfg.perturb,
            "dynamic_eta": cfg.dynamic_eta}


def report_records(run_id: str, seed: int, cfg: AdaptationConfig,
                   report: AdaptationReport) -> list[MetricsRecord]:
    flags = variant_flags(cfg)
    out = []
    for e in report.epochs:
        for stage, bd, acc, ms in ((1, e.stage1, e.acc_after_stage1, e.ms_stage1),
                                   (2, e.stage2, e.acc_after_stage2, e.ms_stage2)):
            out.append(MetricsRecord(run_id, seed, flags, e.epoch, stage, bd.as_dict(), acc,
                                     dict(e.eta), round(ms, 3), report.source_accuracy))
    return out


@dataclass
class Prepared:
    """Pretrained models and target data for one seed."""

    seed: int
    source: DenseNet
    prior: PriorModel
    target: LabeledSet
    radius: float
    source_train_accuracy: float = 0.0
    prior_train_accuracy: float = 0.0


def load_data(cfg: ExperimentConfig, seed: int) -> tuple[LabeledSet, LabeledSet, LabeledSet]:
    if cfg.data.from_files:
        C = cfg.data.spec.n_classes
        return (load_csv(cfg.data.source_csv, "source", C),
                load_csv(cfg.data.target_csv, "target", C),
                load_csv(cfg.data.broad_csv, "broad", C))
    return generate(replace(cfg.data.spec, seed=seed))


def prepare(cfg: ExperimentConfig, seed: int) -> Prepared:
    src, tgt, broad = load_data(cfg, seed)
    C, d = src.n_classes, src.d
    m = cfg.model
    prior = PriorModel.create(d, C, m.prior_hidden, m.prior_k, m.temperature, seed=seed)
    prior, prior_acc = pretrain_prior(prior, broad.features, broad.labels, m.prior_epochs,
                                      m.lr, seed, m.batch_size)
    net = DenseNet([d, *m.hidden, C], np.random.default_rng(seed))
    net, src_acc = pretrain_source(net, src.features, src.labels, m.source_epochs, m.lr, seed,
                                   m.batch_size)
    if cfg.radius is not None:
        radius = cfg.radius
    else:
        radius = default_radius(tgt.features, np.random.default_rng(seed))
    return Prepared(seed, net, prior, tgt, radius * cfg.radius_scale, src_acc, prior_acc)


def adaptation_config(cfg: ExperimentConfig, prep: Prepared, variant: str | None) -> AdaptationConfig:
    pgd = replace(cfg.adapt.pgd, radius=prep.radius)
    base = replace(cfg.adapt, pgd=pgd, seed=prep.seed)
    return apply_variant(base, variant) if variant else base


def run_id(variant: str, seed: int) -> str:
    return f"{variant}-s{seed}"


def run_seed(cfg: ExperimentConfig, seed: int, variants: list[str], out: Path) -> list[dict]:
    """Pretrain once for ``seed`` and adapt under each variant; returns summary rows."""
    prep = prepare(cfg, seed)
    ckpt = out / "checkpoints"
    metrics = out / "metrics"
    ckpt.mkdir(parents=True, exist_ok=True)
    metrics.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt / f"source-s{seed}.ckpt", net_tensors(prep.source), {"seed": seed})
    rows = []
    for variant in variants:
        rid = run_id(variant, seed)
        acfg = adaptation_config(cfg, prep, variant)
        try:
            report = run(prep.source, prep.prior, prep.target, acfg)
        except Exception as e:  # recorded, then re-raised by the caller as exit 2
            with (out / "failures.jsonl").open("a", encoding="utf-8") as f:
                f.write(json.dumps({"run_id": rid, "error": repr(e)}) + "\n")
            raise
        with (metrics / f"{rid}.jsonl").open("w", encoding="utf-8") as f:
            for rec in report_records(rid, seed, acfg, report):
                f.write(rec.to_json() + "\n")
        tensors = net_tensors(report.target)
        tensors["prior.v"] = Parameter(report.prompt, "prior.v")
        save_checkpoint(ckpt / f"{rid}.ckpt", tensors, {"seed": seed, "variant": variant})
        flags = variant_flags(acfg)
        rows.append({"run_id": rid, "seed": seed, "variant": variant, **flags,
                     "source_accuracy": report.source_accuracy,
                     "adapted_accuracy": report.final_accuracy})
    return rows


def _worker_count(n_jobs: int) -> int:
    raw = os.environ.get("DRIVE_THREADS")
    cap = int(raw) if raw else 1
    return max(1, min(cap, n_jobs))


def run_experiment(cfg: ExperimentConfig, variants: list[str] | None = None) -> list[dict]:
    variants = list(variants or cfg.variants)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.txt").write_text(dump_config(cfg), encoding="utf-8")
    fail = out / "failures.jsonl"
    if fail.exists():
        fail.unlink()
    workers = _worker_count(len(cfg.seeds))
    if workers == 1:
        per_seed = [run_seed(cfg, s, variants, out) for s in cfg.seeds]
    else:
        with ProcessPoolExecutor(workers) as pool:
            futs = [pool.submit(run_seed, cfg, s, variants, out) for s in cfg.seeds]
            per_seed = [f.result() for f in futs]
    rows = [r for seed_rows in per_seed for r in seed_rows]
    write_summary(out / "summary.csv", rows)
    return rows


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_summary(path: Path, rows: list[dict]) -> None:
    with path.open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SUMMARY_FIELDS)
        for r in rows:
            w.writerow([_fmt(r[k]) for k in SUMMARY_FIELDS])


def read_summary(path: Path) -> list[dict]:
    with Path(path).open(newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def ordering_holds(means_pct: list[float], tol: float = TIE_TOLERANCE) -> bool:
    """Each mean must not drop more than ``tol`` points below its predecessor."""
    return all(b >= a - tol for a, b in zip(means_pct, means_pct[1:]))


def ablation_table(rows: list[dict]) -> tuple[list[dict], bool]:
    table = []
    for variant in ABLATION_ORDER:
        accs = [100.0 * float(r["adapted_accuracy"]) for r in rows if r["variant"] == variant]
        if not accs:
            raise ValueError(f"ablation: no runs for variant {variant!r}")
        srcs = [100.0 * float(r["source_accuracy"]) for r in rows if r["variant"] == variant]
        table.append({"variant": variant, **VARIANTS[variant], "n_seeds": len(accs),
                      "source_mean": statistics.fmean(srcs),
                      "mean": statistics.fmean(accs),
                      "std": statistics.stdev(accs) if len(accs) > 1 else 0.0})
    return table, ordering_holds([t["mean"] for t in table])


def write_ablation(out: Path, table: list[dict], holds: bool) -> None:
    with (out / "ablation.csv").open("w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["variant", "entropy_weighting", "perturb", "dynamic_eta", "n_seeds",
                     "source_mean_pct", "mean_pct", "std_pct"])
        for t in table:
            w.writerow([t["variant"], _fmt(t["entropy_weighting"]), _fmt(t["perturb"]),
                        _fmt(t["dynamic_eta"]), t["n_seeds"], f"{t['source_mean']:.4f}",
                        f"{t['mean']:.4f}", f"{t['std']:.4f}"])
    verdict = {"ordering_holds": holds, "tie_tolerance_pct": TIE_TOLERANCE,
               "sequence": list(ABLATION_ORDER),
               "means_pct": [round(t["mean"], 6) for t in table]}
    (out / "ablation.json").write_text(json.dumps(verdict, indent=2) + "\n", encoding="utf-8")


def run_ablation(cfg: ExperimentConfig) -> tuple[list[dict], bool]:
    rows = run_experiment(cfg, list(ABLATION_ORDER))
    table, holds = ablation_table(rows)
    write_ablation(Path(cfg.out), table, holds)
    if not holds:
        log.warning("ablation ordering does NOT hold: %s",
                    ", ".join(f"{t['variant']}={t['mean']:.2f}" for t in table))
    return table, holds
