"""
Figures written next to evaluation reports and summaries (display only).
"""

import csv
import logging
from pathlib import Path
from typing import Dict, List, Sequence, Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .evaluation import EvalReport, SummaryRow  # noqa: E402


def plot_report(report: EvalReport, out_dir: Union[str, Path]) -> List[Path]:
    """Per-image metric bars, plus pooled per-class IoU for the segmentation protocol."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: List[Path] = []

    metrics = list(report.aggregate)
    fig, axes = plt.subplots(len(metrics), 1, figsize=(max(6, 0.3 * report.n_images), 2.5 * len(metrics)), squeeze=False)
    ids = [row.id for row in report.rows]
    for ax, metric in zip(axes[:, 0], metrics):
        ax.bar(range(len(ids)), [row.metrics[metric] for row in report.rows], color="tab:blue")
        ax.axhline(report.aggregate[metric], color="tab:red", linestyle="--", label="mean")
        ax.set_ylim(0, 1)
        ax.set_ylabel(metric)
        ax.set_xticks(range(len(ids)))
        ax.set_xticklabels(ids, rotation=90, fontsize=6)
        ax.legend(loc="lower right")
    fig.suptitle(f"{report.protocol} ({report.direction})")
    fig.tight_layout()
    path = out_dir / "per_image_metrics.png"
    fig.savefig(path, dpi=120)
    plt.close(fig)
    written.append(path)

    if report.pooled_class_iou:
        names = report.class_names or [str(i) for i in range(len(report.pooled_class_iou))]
        values = [v if v is not None else 0.0 for v in report.pooled_class_iou]
        fig, ax = plt.subplots(figsize=(max(6, 0.45 * len(names)), 4))
        ax.bar(names, values, color="tab:green")
        ax.set_ylim(0, 1)
        ax.set_ylabel("IoU")
        ax.tick_params(axis="x", rotation=60)
        fig.tight_layout()
        path = out_dir / "class_iou.png"
        fig.savefig(path, dpi=120)
        plt.close(fig)
        written.append(path)

    logging.info(f"Wrote {len(written)} plot(s) to {out_dir}")
    return written


def plot_summary(rows: Sequence[SummaryRow], out_path: Union[str, Path]) -> Path:
    """Metric vs number of paired samples, one line per selection strategy (mean +- std)."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    metrics = sorted({m for row in rows for m in row.mean})
    strategies = sorted({row.strategy for row in rows})

    fig, axes = plt.subplots(1, len(metrics), figsize=(5 * len(metrics), 4), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        for strategy in strategies:
            points = sorted((r.n_paired, r.mean[metric], r.std[metric]) for r in rows if r.strategy == strategy and metric in r.mean)
            if not points:
                continue
            xs, ys, errs = zip(*points)
            ax.errorbar(xs, ys, yerr=errs, marker="o", capsize=3, label=strategy)
        ax.set_xlabel("paired samples")
        ax.set_ylabel(metric)
        ax.set_ylim(0, 1)
        ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_training_log(log_path: Union[str, Path], out_path: Union[str, Path]) -> Path:
    """Loss components per step from train_log.csv."""
    series: Dict[str, List[float]] = {k: [] for k in ("gan_g", "gan_d", "cycle", "identity", "l1_paired")}
    steps: List[int] = []
    with open(log_path, "r", encoding="utf-8", newline="") as f:
        for row in csv.DictReader(f):
            steps.append(int(row["step"]))
            for key in series:
                series[key].append(float(row[key]))

    fig, ax = plt.subplots(figsize=(8, 4))
    for key, values in series.items():
        ax.plot(steps, values, label=key, linewidth=0.8)
    ax.set_xlabel("step")
    ax.set_yscale("symlog", linthresh=1e-3)
    ax.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
