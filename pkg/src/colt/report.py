"""Report rendering: stdout table, delimited file, and matplotlib figures.

Every evaluation writes the machine-readable JSON report plus a flat CSV and
a small set of PNG figures next to it; training writes a loss-curve figure
from its epoch log.  Figures use the Agg backend so runs never need a
display.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .errors import DataError
from .metrics import EvalReport

_METRIC_LABELS = {"recall": "Recall", "ndcg": "NDCG", "comp": "COMP"}


def format_report_table(report: EvalReport) -> str:
    """Human-readable summary table."""
    lines = [f"queries evaluated: {report.query_count}"]
    header = "metric".ljust(8) + "".join(f"@{k}".rjust(10) for k in report.ks)
    if report.at_n:
        header += "@|N|".rjust(10)
    lines.append(header)
    for metric in ("recall", "ndcg", "comp"):
        row = _METRIC_LABELS[metric].ljust(8)
        row += "".join(f"{report.values[metric][k]:10.4f}" for k in report.ks)
        if report.at_n:
            row += f"{report.at_n[metric]:10.4f}"
        lines.append(row)
    if report.groups:
        lines.append("")
        lines.append("breakdown by gold set size:")
        for size, group in sorted(report.groups.items()):
            parts = [f"  |gold|={size} (n={group.count})"]
            for metric in ("recall", "ndcg", "comp"):
                parts.append(f"{_METRIC_LABELS[metric]}@|N|={group.at_n[metric]:.4f}")
            lines.append("  ".join(parts))
    return "\n".join(lines)


def write_report_csv(report: EvalReport, path: str | Path) -> None:
    """Flat delimited form: scope, gold_size, metric, k, value."""
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scope", "gold_size", "metric", "k", "value"])
        for metric, per_k in report.values.items():
            for k, value in per_k.items():
                writer.writerow(["overall", "", metric, k, f"{value:.10f}"])
        for metric, value in report.at_n.items():
            writer.writerow(["overall", "", metric, "N", f"{value:.10f}"])
        for size, group in sorted(report.groups.items()):
            for metric, per_k in group.values.items():
                for k, value in per_k.items():
                    writer.writerow(["breakdown", size, metric, k, f"{value:.10f}"])
            for metric, value in group.at_n.items():
                writer.writerow(["breakdown", size, metric, "N", f"{value:.10f}"])


def plot_metrics(report: EvalReport, path: str | Path) -> None:
    """Grouped bars, one cluster per metric, one bar per K."""
    metrics = list(report.values)
    ks = list(report.ks)
    width = 0.8 / max(len(ks), 1)
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, k in enumerate(ks):
        xs = [i + j * width for i in range(len(metrics))]
        ys = [report.values[m][k] for m in metrics]
        ax.bar(xs, ys, width=width, label=f"@{k}")
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(metrics))])
    ax.set_xticklabels([_METRIC_LABELS[m] for m in metrics])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("value")
    ax.set_title("retrieval metrics")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def plot_breakdown(report: EvalReport, path: str | Path) -> None:
    """Size-matched metrics per gold-set-size subgroup."""
    if not report.groups:
        raise DataError("report has no breakdown section to plot")
    sizes = sorted(report.groups)
    metrics = ("recall", "comp")
    width = 0.8 / len(metrics)
    fig, ax = plt.subplots(figsize=(6, 4))
    for j, metric in enumerate(metrics):
        xs = [i + j * width for i in range(len(sizes))]
        ys = [report.groups[s].at_n[metric] for s in sizes]
        ax.bar(xs, ys, width=width, label=f"{_METRIC_LABELS[metric]}@|N|")
    ax.set_xticks([i + width / 2 for i in range(len(sizes))])
    ax.set_xticklabels([f"|gold|={s}\n(n={report.groups[s].count})" for s in sizes])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("value")
    ax.set_title("size-matched metrics by gold set size")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def read_train_log(path: str | Path) -> list[dict[str, float]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"file not found: {path}")
    rows: list[dict[str, float]] = []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        for rec in reader:
            rows.append({key: float(value) for key, value in rec.items()})
    return rows


def plot_training_curves(log_rows: list[dict[str, float]], path: str | Path) -> None:
    """Loss components per epoch from the training log."""
    if not log_rows:
        raise DataError("training log is empty")
    epochs = [r["epoch"] for r in log_rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, label in (
        ("listwise", "list-wise"),
        ("contrastive_queries", "contrastive (queries)"),
        ("contrastive_scenes", "contrastive (scenes)"),
        ("total", "total"),
    ):
        ax.plot(epochs, [r[key] for r in log_rows], label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_title("training loss")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
