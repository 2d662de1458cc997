"""Report rendering: aligned text tables, JSON, CSV, and matplotlib figures.

The evaluator computes numbers; everything presentation-lives here. Figures
are written as PNG files alongside the delimited outputs when a report
directory is given.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .evaluation import BiasReport, QuadrantCounts

RANKING_COLUMNS = ("HR@1", "HR@3", "HR@5", "PR@3", "PR@5", "MAP@3", "MAP@5", "MRR")
QUADRANT_ORDER = ("DLF", "DF", "LF", "MF")


def format_detection_table(precision: float, recall: float, f1: float) -> str:
    header = f"{'Precision':>10} {'Recall':>10} {'F1':>10}"
    row = f"{100 * precision:>10.2f} {100 * recall:>10.2f} {100 * f1:>10.2f}"
    return "\n".join(["Anomaly detection (x100)", header, row])


def format_ranking_table(values: dict[str, float], title: str = "Root cause localization") -> str:
    header = " ".join(f"{c:>8}" for c in RANKING_COLUMNS)
    row = " ".join(f"{values[c]:>8.2f}" for c in RANKING_COLUMNS)
    return "\n".join([title, header, row])


def format_bias_table(report: BiasReport) -> str:
    lines = ["Diagnostic bias (actual - theoretical)",
             f"{'Metric':>8} {'Theoretical':>12} {'Actual':>10} {'Bias':>10}"]
    for metric in RANKING_COLUMNS:
        lines.append(f"{metric:>8} {report.theoretical[metric]:>12.2f} "
                     f"{report.actual[metric]:>10.2f} {report.bias[metric]:>+10.2f}")
    lines.append(f"cases: theoretical={report.num_theoretical} actual={report.num_actual}"
                 + ("  [warning: detector flagged nothing]" if report.degenerate_actual else ""))
    return "\n".join(lines)


def format_quadrant_table(counts: QuadrantCounts, k: int) -> str:
    header = " ".join(f"{q:>6}" for q in QUADRANT_ORDER) + f" {'total':>6}"
    row = (f"{counts.dlf:>6} {counts.df:>6} {counts.lf:>6} {counts.mf:>6} "
           f"{counts.total:>6}")
    return "\n".join([f"Diagnosis quadrants (localized = hit in top {k})", header, row])


def quadrants_csv(counts: QuadrantCounts) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["quadrant", "count"])
    for name, value in zip(QUADRANT_ORDER, (counts.dlf, counts.df, counts.lf, counts.mf)):
        writer.writerow([name, value])
    return buf.getvalue()


def render_text_report(report: dict) -> str:
    """Assemble the human-readable report from the JSON-ready dict."""
    blocks = []
    det = report.get("detection")
    if det:
        blocks.append(format_detection_table(det["precision"], det["recall"], det["f1"]))
    ranking = report.get("ranking")
    if ranking:
        blocks.append(format_ranking_table(
            ranking, title="Root cause localization (x100, all true anomalies)"))
    bias = report.get("bias")
    if bias:
        blocks.append(format_bias_table(BiasReport(
            theoretical=bias["theoretical"], actual=bias["actual"], bias=bias["bias"],
            num_theoretical=bias["num_theoretical"], num_actual=bias["num_actual"],
            degenerate_actual=bias["degenerate_actual"])))
    quad = report.get("quadrants")
    if quad:
        counts = QuadrantCounts(dlf=quad["DLF"], df=quad["DF"], lf=quad["LF"], mf=quad["MF"])
        blocks.append(format_quadrant_table(counts, k=quad["k"]))
    for name, block in report.get("ablations", {}).items():
        blocks.append(format_ranking_table(
            block["ranking"], title=f"Ablation [{name}] localization (x100)"))
        det_b = block.get("detection")
        if det_b:
            blocks.append(format_detection_table(det_b["precision"], det_b["recall"],
                                                 det_b["f1"]))
    return "\n\n".join(blocks) + "\n"


# ---------------------------------------------------------------------------
# figures

def _save(fig, path: Path) -> Path:
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def figure_quadrants(counts: QuadrantCounts, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.2))
    values = [counts.dlf, counts.df, counts.lf, counts.mf]
    colors = ["#ddbb33", "#66aa55", "#cc5544", "#888888"]
    ax.bar(QUADRANT_ORDER, values, color=colors)
    for i, v in enumerate(values):
        ax.text(i, v, str(v), ha="center", va="bottom", fontsize=9)
    ax.set_ylabel("true-anomalous windows")
    ax.set_title("Diagnosis outcome distribution")
    return _save(fig, path)


def figure_bias(report: BiasReport, path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(7, 3.4))
    metrics = list(RANKING_COLUMNS)
    x = range(len(metrics))
    width = 0.38
    ax.bar([i - width / 2 for i in x], [report.theoretical[m] for m in metrics],
           width, label="theoretical", color="#4477aa")
    ax.bar([i + width / 2 for i in x], [report.actual[m] for m in metrics],
           width, label="actual", color="#ee8866")
    ax.set_xticks(list(x), metrics, rotation=30)
    ax.set_ylabel("score (x100)")
    ax.set_title("Localization under theoretical vs actual detection")
    ax.legend()
    return _save(fig, path)


def figure_training_curves(history: Sequence[dict], path: Path) -> Path:
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.4))
    epochs = [h["epoch"] for h in history]
    for key in ("detector", "localizer", "disentangle", "align", "total"):
        ax1.plot(epochs, [h[key] for h in history], label=key)
    ax1.set_xlabel("epoch")
    ax1.set_ylabel("loss")
    ax1.set_yscale("symlog", linthresh=1e-3)
    ax1.legend(fontsize=7)
    ax1.set_title("Training losses")
    ax2.plot(epochs, [h["val_f1"] for h in history], color="#228833")
    ax2.set_xlabel("epoch")
    ax2.set_ylabel("validation F1")
    ax2.set_ylim(0, 1.05)
    ax2.set_title("Validation detection F1")
    return _save(fig, path)


def figure_ranking(values: dict[str, float], path: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 3.2))
    metrics = list(RANKING_COLUMNS)
    ax.bar(metrics, [values[m] for m in metrics], color="#4477aa")
    ax.set_ylim(0, 105)
    ax.set_ylabel("score (x100)")
    ax.set_title("Root cause localization")
    ax.tick_params(axis="x", rotation=30)
    return _save(fig, path)


def write_report(out_dir: str | Path, report: dict,
                 history: Sequence[dict] | None = None) -> dict[str, Path]:
    """Write report.json / report.txt plus CSV and figures; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}

    paths["json"] = out / "report.json"
    paths["json"].write_text(json.dumps(report, indent=2, sort_keys=True))
    paths["text"] = out / "report.txt"
    paths["text"].write_text(render_text_report(report))

    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    ranking = report.get("ranking")
    if ranking:
        paths["fig_ranking"] = figure_ranking(ranking, figures / "ranking.png")
    quad = report.get("quadrants")
    if quad:
        counts = QuadrantCounts(dlf=quad["DLF"], df=quad["DF"], lf=quad["LF"], mf=quad["MF"])
        paths["quadrants_csv"] = out / "quadrants.csv"
        paths["quadrants_csv"].write_text(quadrants_csv(counts))
        paths["fig_quadrants"] = figure_quadrants(counts, figures / "quadrants.png")
    bias = report.get("bias")
    if bias:
        paths["fig_bias"] = figure_bias(BiasReport(
            theoretical=bias["theoretical"], actual=bias["actual"], bias=bias["bias"],
            num_theoretical=bias["num_theoretical"], num_actual=bias["num_actual"],
            degenerate_actual=bias["degenerate_actual"]), figures / "bias.png")
    if history:
        paths["fig_training"] = figure_training_curves(history, figures / "training.png")
    return paths
