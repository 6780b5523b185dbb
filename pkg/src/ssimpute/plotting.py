"""Static figures for experiment reports (matplotlib, Agg backend)."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import ESTIMATORS, RunReport, metric_values  # noqa: E402

LABELS = {
    "ss_imputation": "SS imputation + SS",
    "ss_full": "SS (full data)",
    "true_oracle": "true model",
}
STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 100,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
}
# fixed metadata keeps repeated renders byte-identical
_META = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, metadata=_META)
    plt.close(fig)
    return path


def cod_miss_boxplot(reports: Sequence[RunReport], path) -> Path:
    ss = metric_values(reports, "ss_imputation", "cod_miss")
    base = metric_values(reports, "ss_imputation", "cod_miss_mean")
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.boxplot([ss, base])
        ax.set_xticks([1, 2], ["SS imputation", "mean imputation"])
        ax.set_ylabel("COD on missing outputs")
        return _save(fig, Path(path))


def cod_k_curves(reports: Sequence[RunReport], k_max: int, path) -> Path:
    ks = np.arange(1, k_max + 1)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for est in ESTIMATORS:
            means = [np.mean(v) if (v := metric_values(reports, est, f"cod_{k}")).size else np.nan
                     for k in ks]
            ax.plot(ks, means, marker="o", ms=3, label=LABELS[est])
        ax.set_xlabel("prediction horizon k")
        ax.set_ylabel("mean COD_k over runs")
        ax.legend()
        return _save(fig, Path(path))


def cod_k_boxplot(reports: Sequence[RunReport], k: int, path) -> Path:
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.boxplot([metric_values(reports, est, f"cod_{k}") for est in ESTIMATORS])
        ax.set_xticks(range(1, len(ESTIMATORS) + 1), [LABELS[e] for e in ESTIMATORS])
        ax.set_ylabel(f"COD_{k}")
        return _save(fig, Path(path))


def imputed_vs_full_scatter(reports: Sequence[RunReport], k: int, path) -> Path:
    """Per-run COD_k of the imputation pipeline against the full-data fit."""
    a = {r.run_index: r.cod_k[k - 1] for r in reports
         if r.estimator == "ss_imputation" and r.status == "ok"}
    b = {r.run_index: r.cod_k[k - 1] for r in reports
         if r.estimator == "ss_full" and r.status == "ok"}
    idx = sorted(set(a) & set(b))
    x, y = np.array([b[i] for i in idx]), np.array([a[i] for i in idx])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 4.5))
        ax.scatter(x, y, s=12)
        if idx:
            lo = float(min(x.min(), y.min(), 0.0))
            ax.plot([lo, 1], [lo, 1], "k--", lw=0.8)
        ax.set_xlabel(f"COD_{k}, SS (full data)")
        ax.set_ylabel(f"COD_{k}, SS imputation + SS")
        return _save(fig, Path(path))


def experiment_figures(reports: Sequence[RunReport], k_max: int, out_dir) -> List[Path]:
    out = Path(out_dir)
    k5 = min(5, k_max)
    paths = [
        cod_k_curves(reports, k_max, out / "cod_k_mean.png"),
        cod_k_boxplot(reports, k5, out / f"cod_{k5}_boxplot.png"),
        cod_k_boxplot(reports, 1, out / "cod_1_boxplot.png"),
        imputed_vs_full_scatter(reports, 1, out / "cod_1_scatter.png"),
    ]
    if metric_values(reports, "ss_imputation", "cod_miss").size:
        paths.insert(0, cod_miss_boxplot(reports, out / "cod_miss_boxplot.png"))
    return paths
