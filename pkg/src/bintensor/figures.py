"""Matplotlib renderings of the report CSVs, saved next to them as PNGs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["save_bic_curve", "save_suite_figure", "save_trace"]

_STYLE = {
    "figure.figsize": (6.0, 4.0),
    "figure.dpi": 110,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "font.size": 9,
    "legend.fontsize": 8,
}


def _groups(summary, key):
    vals = []
    for row in summary:
        if row[key] not in vals:
            vals.append(row[key])
    return vals


def _errorbar_by(ax, summary, x_key, rank_key, mean_key, se_key, label_fmt):
    for g in _groups(summary, rank_key):
        rows = [r for r in summary if r[rank_key] == g]
        x = [r[x_key] for r in rows]
        y = [r[mean_key] for r in rows]
        e = [r[se_key] for r in rows]
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3, label=label_fmt % g)
    ax.legend()


def save_suite_figure(name, summary, path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        if name == "consistency":
            _errorbar_by(ax, summary, "dim", "rank", "loss_mean", "loss_se", "rank %d")
            ax.set_xlabel("tensor dimension d")
            ax.set_ylabel("loss")
            ax.set_title("Estimation error vs dimension")
        elif name == "dithering":
            _errorbar_by(ax, summary, "sigma", "rank", "loss_mean", "loss_se", "rank %d")
            ax.set_xscale("log")
            ax.set_xlabel("noise level sigma")
            ax.set_ylabel("loss")
            ax.set_title("Estimation error vs noise level")
        elif name == "rank_table":
            labels = [f"d={r['dim']}, s={r['sigma']:g}" for r in summary]
            true = np.array([r["rank"] for r in summary], dtype=float)
            sel = np.array([r["selected_rank_mean"] for r in summary])
            se = np.array([r["selected_rank_se"] for r in summary])
            pos = np.arange(len(summary))
            ax.errorbar(pos, sel, yerr=se, fmt="o", capsize=3, label="selected")
            ax.plot(pos, true, "x", color="k", label="true")
            ax.set_xticks(pos, labels, rotation=45, ha="right", fontsize=7)
            ax.set_ylabel("rank")
            ax.set_title("BIC rank selection")
            ax.legend()
        elif name == "block_table":
            labels = [str(r["submodel"]) for r in summary]
            vals = [r["relative_loss_mean"] for r in summary]
            errs = [r["relative_loss_se"] for r in summary]
            ax.bar(labels, vals, yerr=errs, capsize=4, color="tab:blue", alpha=0.8)
            ax.set_ylabel("relative loss")
            ax.set_title("Block-model recovery")
        elif name == "boolean_compare":
            x = [r["boolean_rank"] for r in summary]
            ax.errorbar(x, [r["rmse_mean"] for r in summary], yerr=[r["rmse_se"] for r in summary],
                        marker="o", capsize=3, label="RMSE")
            ax.errorbar(x, [r["mer_mean"] for r in summary], yerr=[r["mer_se"] for r in summary],
                        marker="s", capsize=3, label="MER")
            ax.set_xlabel("boolean rank")
            ax.set_ylabel("error")
            ax.set_title("Boolean-model recovery")
            ax.legend()
        else:
            raise ValueError(f"unknown suite {name!r}")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def save_bic_curve(table, path) -> None:
    rows = [r for r in table if r["bic"] is not None]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot([r["rank"] for r in rows], [r["bic"] for r in rows], marker="o")
        if rows:
            best = min(rows, key=lambda r: r["bic"])
            ax.axvline(best["rank"], color="tab:red", ls="--", alpha=0.7, label=f"minimum at {best['rank']}")
            ax.legend()
        ax.set_xlabel("rank")
        ax.set_ylabel("BIC")
        ax.set_title("BIC rank scan")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def save_trace(trace, path) -> None:
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots()
        ax.plot(np.arange(len(trace)), trace, marker=".")
        ax.set_xlabel("sweep")
        ax.set_ylabel("log-likelihood")
        ax.set_title("Objective trajectory")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
