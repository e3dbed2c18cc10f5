"""Report rendering: training curves, qualitative panels, comparison
strips and the ablation results table."""

from __future__ import annotations

import csv
import os

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import MetricsReport
from .training import TrainingLog

TABLE_COLUMNS = ["Model", "Param", "Dice(DSC)", "HD95", "IoU", "Acc", "Pre", "Sen", "Spe"]
# metric key per table column; HD95 is best when lowest
_COLUMN_KEYS = {
    "Dice(DSC)": "dice", "HD95": "hd95", "IoU": "iou", "Acc": "accuracy",
    "Pre": "precision", "Sen": "sensitivity", "Spe": "specificity",
}
LOWER_IS_BETTER = {"HD95"}

CURVE_PANELS = ["total_loss", "loss_ce", "loss_dice", "lr", "val_dice", "val_iou"]


def plot_training_curves(log: TrainingLog, path) -> list[str]:
    """Six-panel figure: the three losses, lr, and the validation metrics."""
    fig, axes = plt.subplots(2, 3, figsize=(13, 7))
    step_iters = [s["iteration"] for s in log.steps]
    val_iters = [v["iteration"] for v in log.validations]
    for ax, panel in zip(axes.flat, CURVE_PANELS):
        if panel in ("val_dice", "val_iou"):
            ax.plot(val_iters, [v[panel] for v in log.validations], marker="o", color="tab:green")
        else:
            ax.plot(step_iters, [s[panel] for s in log.steps], color="tab:blue")
        ax.set_title(panel)
        ax.set_xlabel("iteration")
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return list(CURVE_PANELS)


def _draw_contours(ax, mask: np.ndarray, color: str) -> None:
    if np.asarray(mask).any():
        ax.contour(mask.astype(float), levels=[0.5], colors=color, linewidths=1.2)


def plot_qualitative_panel(images, gts, preds, path, max_rows: int = 4) -> None:
    """Rows of (input, GT overlay, prediction overlay); pred blue, GT red."""
    n = min(len(images), max_rows)
    fig, axes = plt.subplots(n, 3, figsize=(9, 3 * n), squeeze=False)
    for r in range(n):
        for c, title in enumerate(["input", "ground truth", "prediction"]):
            ax = axes[r][c]
            ax.imshow(images[r], cmap="gray")
            ax.set_axis_off()
            if r == 0:
                ax.set_title(title)
        _draw_contours(axes[r][1], gts[r], "red")
        _draw_contours(axes[r][2], preds[r], "blue")
        _draw_contours(axes[r][2], gts[r], "red")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_comparison_strip(image, gt, named_preds: dict[str, np.ndarray], path) -> int:
    """One row: input, GT, then each model's prediction (pred blue, GT red)."""
    n_cols = 2 + len(named_preds)
    fig, axes = plt.subplots(1, n_cols, figsize=(3 * n_cols, 3), squeeze=False)
    axes = axes[0]
    axes[0].imshow(image, cmap="gray")
    axes[0].set_title("input")
    axes[1].imshow(image, cmap="gray")
    axes[1].set_title("GT")
    _draw_contours(axes[1], gt, "red")
    for ax, (name, pred) in zip(axes[2:], named_preds.items()):
        ax.imshow(image, cmap="gray")
        ax.set_title(name)
        _draw_contours(ax, pred, "blue")
        _draw_contours(ax, gt, "red")
    for ax in axes:
        ax.set_axis_off()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return n_cols


def table_rows(results: list[tuple[str, int, MetricsReport]]) -> list[dict]:
    """Flatten (model name, parameter count, report) triples into table rows."""
    rows = []
    for name, params, report in results:
        row = {"Model": name, "Param": f"{params / 1e6:.1f}M"}
        for col, key in _COLUMN_KEYS.items():
            row[col] = report.means[key]
        rows.append(row)
    return rows


def best_per_column(rows: list[dict]) -> dict[str, int]:
    """Index of the best row for each metric column."""
    best = {}
    for col in _COLUMN_KEYS:
        values = [row[col] for row in rows]
        best[col] = int(np.argmin(values) if col in LOWER_IS_BETTER else np.argmax(values))
    return best


def write_table_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TABLE_COLUMNS)
        writer.writeheader()
        for row in rows:
            out = dict(row)
            for col in _COLUMN_KEYS:
                out[col] = f"{row[col]:.3f}"
            writer.writerow(out)


def format_table(rows: list[dict], mark_best: bool = True) -> str:
    """Aligned plaintext table; the best value per metric column is starred."""
    best = best_per_column(rows) if mark_best and rows else {}
    rendered = []
    for i, row in enumerate(rows):
        cells = {"Model": row["Model"], "Param": row["Param"]}
        for col in _COLUMN_KEYS:
            text = f"{row[col]:.3f}"
            if best.get(col) == i:
                text = "*" + text
            cells[col] = text
        rendered.append(cells)
    widths = {col: max([len(col)] + [len(r[col]) for r in rendered]) for col in TABLE_COLUMNS}
    lines = ["  ".join(col.ljust(widths[col]) for col in TABLE_COLUMNS)]
    lines.append("  ".join("-" * widths[col] for col in TABLE_COLUMNS))
    for r in rendered:
        lines.append("  ".join(r[col].ljust(widths[col]) for col in TABLE_COLUMNS))
    return "\n".join(lines)


def render_run_report(run_dir: str, log: TrainingLog, images, gts, preds,
                      model_name: str, params: int, report: MetricsReport) -> dict:
    """Emit curves, a qualitative panel and the metrics table for one run."""
    paths = {
        "curves": os.path.join(run_dir, "curves.png"),
        "qualitative": os.path.join(run_dir, "qualitative.png"),
        "report": os.path.join(run_dir, "report.csv"),
        "report_table": os.path.join(run_dir, "report.txt"),
        "per_slice": os.path.join(run_dir, "per_slice_metrics.csv"),
    }
    plot_training_curves(log, paths["curves"])
    plot_qualitative_panel(images, gts, preds, paths["qualitative"])
    rows = table_rows([(model_name, params, report)])
    write_table_csv(rows, paths["report"])
    with open(paths["report_table"], "w") as fh:
        fh.write(format_table(rows, mark_best=False) + "\n")
    report.to_csv(paths["per_slice"])
    return paths
