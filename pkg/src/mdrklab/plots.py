"""Figure rendering for sweep CSV files.

Kept separate from the numeric pipeline so that runs never need a graphics
backend; the ``plot`` subcommand reads a finished CSV and writes a vector (or
raster) figure next to it.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .lab import read_records

__all__ = ["render_csv"]


def _grouped(rows, xkey, ykey):
    by_method = {}
    for row in rows:
        if row[xkey] is None or row[ykey] is None:
            continue
        by_method.setdefault(row["method"], []).append((row[xkey], row[ykey]))
    return by_method


def render_csv(csv_path, out_path=None, fmt: str = None) -> Path:
    """Render a convergence or conditioning CSV to a figure file.

    The kind is inferred from the populated columns: error-vs-dt plots use
    ``l2_error``, conditioning plots use ``mean_cond1`` against ``epsilon``.
    Returns the path written.
    """
    csv_path = Path(csv_path)
    rows = read_records(csv_path)
    if not rows:
        raise ValueError(f"{csv_path} holds no data rows")
    if any(r["l2_error"] is not None for r in rows):
        groups = _grouped(rows, "dt", "l2_error")
        xlabel, ylabel = "dt", "l2 error"
    elif any(r["mean_cond1"] is not None for r in rows):
        groups = _grouped(rows, "epsilon", "mean_cond1")
        xlabel, ylabel = "epsilon", "mean cond1 of the Newton matrix"
    else:
        raise ValueError(f"{csv_path} has neither l2_error nor mean_cond1 data")
    if not groups:
        raise ValueError(f"{csv_path} has no plottable points")

    fmt = (fmt or "pdf").lstrip(".")
    out = Path(out_path) if out_path is not None else csv_path.with_suffix(f".{fmt}")

    fig, ax = plt.subplots(figsize=(5.0, 3.6))
    for method, pts in sorted(groups.items()):
        pts.sort()
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.loglog(xs, ys, marker="o", label=method)
    if xlabel == "epsilon":
        ax.invert_xaxis()
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, which="major", alpha=0.5)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out
