"""PNG figures written next to the CSV reports.

Everything renders through the Agg backend with the Software tag stripped,
so the same inputs give the same bytes.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.family": "DejaVu Sans",
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "legend.fontsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "svg.hashsalt": "notchlab",
}
DPI = 120
PANEL_COLOR = {"with_scorecard": "#1f5f8b", "without_scorecard": "#c0612b"}


def _save(fig, path):
    fig.savefig(path, dpi=DPI, format="png", metadata={"Software": None})
    plt.close(fig)


def importance_bars(reports: dict, path) -> None:
    """Horizontal bars of relative importance, one column of axes per panel."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, len(reports), figsize=(4.2 * len(reports), 6.5), squeeze=False)
        for ax, (panel, rep) in zip(axes[0], reports.items()):
            names = rep.names[::-1]
            vals = np.array([e[1] for e in rep.entries][::-1])
            total = vals.sum()
            rel = vals / total if total > 0 else vals
            ax.barh(np.arange(len(names)), rel, color=PANEL_COLOR.get(panel, "0.4"))
            ax.set_yticks(np.arange(len(names)))
            ax.set_yticklabels(names)
            ax.set_xlabel("relative Gini importance")
            ax.set_title(panel.replace("_", " "))
        fig.tight_layout()
        _save(fig, path)


def increment_bars(rows, path) -> None:
    """Accuracy gained by each variable group, grouped by panel."""
    with plt.rc_context(STYLE):
        groups = list(dict.fromkeys(r.group for r in rows))
        panels = list(dict.fromkeys(r.panel for r in rows))
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        w = 0.8 / max(1, len(panels))
        for j, panel in enumerate(panels):
            vals = [next((r.accuracy_delta for r in rows if r.group == g and r.panel == panel), 0.0)
                    for g in groups]
            ax.bar(np.arange(len(groups)) + (j - (len(panels) - 1) / 2) * w, vals, w,
                   label=panel.replace("_", " "), color=PANEL_COLOR.get(panel, "0.4"))
        ax.axhline(0, color="0.3", lw=0.6)
        ax.set_xticks(np.arange(len(groups)))
        ax.set_xticklabels(groups)
        ax.set_ylabel("accuracy increment")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def heterogeneity_plot(res, path, dim: str = "manager", level: float = 0.05) -> None:
    """Sorted group coefficients with 95% bars; significant ones highlighted."""
    with plt.rc_context(STYLE):
        order = np.argsort(res.coef, kind="stable")
        coef, se = res.coef[order], res.std_error[order]
        sig = res.significant(level)[order]
        x = np.arange(len(coef))
        fig, ax = plt.subplots(figsize=(6.5, 3.4))
        ax.errorbar(x[~sig], coef[~sig], yerr=1.96 * se[~sig], fmt="o", ms=2, lw=0.5, color="0.6",
                    label="not significant")
        ax.errorbar(x[sig], coef[sig], yerr=1.96 * se[sig], fmt="o", ms=3, lw=0.7, color="#b22222",
                    label=f"p < {level:g}")
        ax.axhline(0, color="0.3", lw=0.6)
        ax.set_xlabel(f"{dim} (sorted by coefficient)")
        ax.set_ylabel("demeaned absolute error")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def per_year_plot(rows, path) -> None:
    """Accuracy with its exact confidence band by year."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        for panel in dict.fromkeys(r.panel for r in rows):
            sel = [r for r in rows if r.panel == panel]
            yr = np.array([r.year for r in sel])
            acc = np.array([r.report.accuracy for r in sel])
            lo = np.array([r.report.accuracy_lower for r in sel])
            hi = np.array([r.report.accuracy_upper for r in sel])
            c = PANEL_COLOR.get(panel, "0.4")
            ax.plot(yr, acc, "o-", color=c, ms=3, label=panel.replace("_", " "))
            ax.fill_between(yr, lo, hi, color=c, alpha=0.2, lw=0)
        ax.set_xlabel("year")
        ax.set_ylabel("accuracy")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)


def confusion_heatmap(cm, path, title: str = "") -> None:
    """Row-normalized confusion matrix, rows = model rating."""
    with plt.rc_context(STYLE):
        counts = cm.counts.astype(np.float64)
        rows = counts.sum(axis=1, keepdims=True)
        share = np.divide(counts, rows, out=np.zeros_like(counts), where=rows > 0)
        fig, ax = plt.subplots(figsize=(5.2, 4.6))
        im = ax.imshow(share, cmap="Blues", vmin=0, vmax=1, origin="upper")
        ticks = np.arange(len(cm.labels))
        ax.set_xticks(ticks)
        ax.set_yticks(ticks)
        ax.set_xticklabels([str(v) for v in cm.labels])
        ax.set_yticklabels([str(v) for v in cm.labels])
        ax.set_xlabel("manager rating")
        ax.set_ylabel("model rating")
        if title:
            ax.set_title(title)
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04, label="row share")
        fig.tight_layout()
        _save(fig, path)


def accuracy_bars(reports, path) -> None:
    """Pooled accuracy with exact intervals for every model and panel."""
    with plt.rc_context(STYLE):
        models = list(dict.fromkeys(r.model for r in reports))
        panels = list(dict.fromkeys(r.panel for r in reports))
        fig, ax = plt.subplots(figsize=(5.5, 3.4))
        w = 0.8 / max(1, len(panels))
        for j, panel in enumerate(panels):
            sel = {r.model: r for r in reports if r.panel == panel}
            x = np.arange(len(models)) + (j - (len(panels) - 1) / 2) * w
            acc = np.array([sel[m].accuracy if m in sel else np.nan for m in models])
            lo = np.array([sel[m].accuracy_lower if m in sel else np.nan for m in models])
            hi = np.array([sel[m].accuracy_upper if m in sel else np.nan for m in models])
            ax.bar(x, acc, w, label=panel.replace("_", " "), color=PANEL_COLOR.get(panel, "0.4"))
            # exact intervals drawn directly; errorbar() warns on asymmetric 2-row input
            ax.vlines(x, lo, hi, color="0.15", lw=0.8)
            ax.hlines(np.concatenate([lo, hi]), np.tile(x - w / 8, 2), np.tile(x + w / 8, 2),
                      color="0.15", lw=0.8)
        nir = reports[0].nir if reports else None
        if nir is not None:
            ax.axhline(nir, color="0.3", ls="--", lw=0.7, label="no-information rate")
        ax.set_xticks(np.arange(len(models)))
        ax.set_xticklabels(models)
        ax.set_ylim(0, 1)
        ax.set_ylabel("accuracy")
        ax.legend(frameon=False)
        fig.tight_layout()
        _save(fig, path)
