"""Delimited outputs and figures written next to run artefacts."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
from matplotlib.ticker import MaxNLocator  # noqa: E402

# no timestamp or version strings, so reruns produce identical files
_PNG_METADATA = {"Software": None}


def write_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_csv(path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows([[_fmt(v) for v in row] for row in rows])


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return "" if v is None else v


def write_loss_curve(history: Sequence[float], out_dir) -> tuple[Path, Path]:
    """loss_curve.csv (epoch,loss) and loss_curve.png."""
    out_dir = Path(out_dir)
    csv_path, png_path = out_dir / "loss_curve.csv", out_dir / "loss_curve.png"
    write_csv(csv_path, ("epoch", "loss"), [(i + 1, float(v)) for i, v in enumerate(history)])
    fig, ax = plt.subplots(figsize=(5, 3.2))
    ax.plot(range(1, len(history) + 1), history, marker="." if len(history) < 50 else None)
    ax.set_xlabel("epoch")
    ax.xaxis.set_major_locator(MaxNLocator(integer=True))
    ax.set_ylabel("contrastive loss")
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    return csv_path, png_path


SWEEP_METRICS = ("mse", "rho", "tau", "auc")


def write_sweep(key: str, rows: Sequence[dict], out_dir) -> tuple[Path, Path]:
    """sweep.csv (one row per value) and sweep.png (one panel per metric present)."""
    out_dir = Path(out_dir)
    metrics = [m for m in SWEEP_METRICS if any(m in r for r in rows)]
    csv_path, png_path = out_dir / "sweep.csv", out_dir / "sweep.png"
    write_csv(csv_path, [key] + metrics, [[r["value"]] + [r.get(m) for m in metrics] for r in rows])
    fig, axes = plt.subplots(1, len(metrics), figsize=(3.6 * len(metrics), 3.2), squeeze=False)
    xs = [r["value"] for r in rows]
    for ax, m in zip(axes[0], metrics):
        ys = [r.get(m) for r in rows]
        if m == "mse":
            ys = [None if y is None else y * 1e3 for y in ys]
            ax.set_ylabel("MSE (x1e-3)")
        else:
            ax.set_ylabel(m)
        ax.plot(xs, ys, marker="o")
        ax.set_xlabel(key)
        ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(png_path, dpi=100, metadata=_PNG_METADATA)
    plt.close(fig)
    return csv_path, png_path


def format_metrics(report: dict) -> str:
    """One ``name<TAB>value`` line per metric; MSE is shown in units of 1e-3."""
    lines = []
    for k in ("task", "n_pairs", "mse", "rho", "tau", "auc", "accuracy"):
        if k in report:
            v = report[k]
            if k == "mse":
                lines.append(f"mse_x1e-3\t{v * 1e3:.4f}")
            elif isinstance(v, float):
                lines.append(f"{k}\t{v:.4f}")
            else:
                lines.append(f"{k}\t{v}")
    for k, v in sorted(report.get("p_at", {}).items(), key=lambda kv: int(kv[0])):
        lines.append(f"p@{k}\t{'n/a' if v is None else format(v, '.4f')}")
    return "\n".join(lines)
