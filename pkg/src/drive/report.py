"""SVG plots and a text digest from metrics JSON-lines files."""

from __future__ import annotations

import logging
from collections import defaultdict
from pathlib import Path
from xml.sax.saxutils import escape

from .experiment import MetricsRecord, read_summary

log = logging.getLogger(__name__)

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")


def read_metrics(metrics_dir) -> tuple[dict[str, list[MetricsRecord]], int]:
    """Records grouped by run id, plus the number of lines that failed to parse."""
    runs: dict[str, list[MetricsRecord]] = defaultdict(list)
    bad = 0
    for path in sorted(Path(metrics_dir).glob("*.jsonl")):
        for line in path.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            try:
                rec = MetricsRecord.from_json(line)
            except (ValueError, TypeError, KeyError):
                bad += 1
                continue
            runs[rec.run_id].append(rec)
    for recs in runs.values():
        recs.sort(key=lambda r: (r.epoch, r.stage))
    return dict(runs), bad


def line_chart(series: dict[str, list[tuple[float, float]]], title: str, xlabel: str,
               ylabel: str, width: int = 640, height: int = 400) -> str:
    pad_l, pad_r, pad_t, pad_b = 60, 150, 36, 44
    pts = [p for s in series.values() for p in s]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    xs, ys = [p[0] for p in pts], [p[1] for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    if x1 == x0:
        x1 = x0 + 1.0
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pw, ph = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(x):
        return pad_l + (x - x0) / (x1 - x0) * pw

    def sy(y):
        return pad_t + (1.0 - (y - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{width / 2:.1f}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<rect x="{pad_l}" y="{pad_t}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>',
           f'<text x="{pad_l + pw / 2:.1f}" y="{height - 8}" text-anchor="middle">{escape(xlabel)}</text>',
           f'<text x="14" y="{pad_t + ph / 2:.1f}" text-anchor="middle" '
           f'transform="rotate(-90 14 {pad_t + ph / 2:.1f})">{escape(ylabel)}</text>']
    for k in range(5):
        yv = y0 + (y1 - y0) * k / 4
        out.append(f'<text x="{pad_l - 4}" y="{sy(yv) + 4:.1f}" text-anchor="end">{yv:.3g}</text>')
        xv = x0 + (x1 - x0) * k / 4
        out.append(f'<text x="{sx(xv):.1f}" y="{pad_t + ph + 14}" text-anchor="middle">{xv:.3g}</text>')
    for i, (name, s) in enumerate(sorted(series.items())):
        color = PALETTE[i % len(PALETTE)]
        path = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in s)
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{path}"/>')
        ly = pad_t + 12 + 14 * i
        out.append(f'<line x1="{width - pad_r + 8}" y1="{ly - 4}" x2="{width - pad_r + 24}" '
                   f'y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{width - pad_r + 28}" y="{ly}">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _final_accuracy(recs: list[MetricsRecord]) -> float:
    stage2 = [r for r in recs if r.stage == 2]
    return stage2[-1].target_accuracy if stage2 else recs[-1].target_accuracy


def build_report(metrics_dir, out_dir) -> Path:
    """Write three SVG plots and ``digest.txt``; raises FileNotFoundError if no metrics."""
    metrics_dir = Path(metrics_dir)
    if (metrics_dir / "metrics").is_dir():
        metrics_dir = metrics_dir / "metrics"
    runs, bad = read_metrics(metrics_dir)
    if not runs:
        raise FileNotFoundError(f"no metrics records under {metrics_dir}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    losses = {}
    for rid, recs in runs.items():
        for stage in (1, 2):
            losses[f"{rid} stage{stage}"] = [(r.epoch, r.losses["total"]) for r in recs
                                             if r.stage == stage]
    (out / "loss_curves.svg").write_text(
        line_chart(losses, "Stage totals per epoch", "epoch", "loss"), encoding="utf-8")
    acc = {rid: [(r.epoch + 0.5 * (r.stage - 1), r.target_accuracy) for r in recs]
           for rid, recs in runs.items()}
    (out / "accuracy.svg").write_text(
        line_chart(acc, "Target accuracy", "epoch", "accuracy"), encoding="utf-8")
    eta = {}
    for rid, recs in runs.items():
        s2 = [r for r in recs if r.stage == 2]
        for key in ("min", "mean", "max"):
            eta[f"{rid} {key}"] = [(r.epoch, r.eta[key]) for r in s2]
    (out / "eta.svg").write_text(
        line_chart(eta, "PGD start magnitude per epoch", "epoch", "eta"), encoding="utf-8")

    lines = [f"runs: {len(runs)}", f"skipped_records: {bad}"]
    for rid in sorted(runs):
        recs = runs[rid]
        lines.append(f"{rid} source_accuracy={recs[0].source_accuracy!r} "
                     f"final_accuracy={_final_accuracy(recs)!r} epochs={recs[-1].epoch + 1}")
    summary = metrics_dir.parent / "summary.csv"
    if summary.is_file():
        mism = 0
        for row in read_summary(summary):
            recs = runs.get(row["run_id"])
            if recs is not None and repr(_final_accuracy(recs)) != row["adapted_accuracy"]:
                mism += 1
        lines.append(f"summary_mismatches: {mism}")
    if bad:
        log.warning("skipped %d corrupt metrics record(s)", bad)
    digest = out / "digest.txt"
    digest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return digest
