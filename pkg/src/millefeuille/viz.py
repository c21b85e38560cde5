"""Figure rendering for report data.

Reports stay data-first: every function here consumes the JSON-ready report
dictionaries the CLI emits and renders a matplotlib figure to a file next to
them. Nothing downstream reads the figures back.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


def save_ratio_histogram(records: list[dict], path: str, title: str = "model / formula ratio") -> None:
    ratios = [r["ratio"] for r in records if r["ratio"] > 0]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(np.log(ratios), bins=60, color="#34618f")
    ax.set_xlabel("ln(model / formula)")
    ax.set_ylabel("pairs")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_qs_modulus(bins: list[dict], path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    t = [row["t"] for row in bins]
    eta = [row["eta_hat"] for row in bins]
    ax.loglog(t, eta, "o-", color="#b14a2f", label="observed modulus")
    ax.loglog(t, t, "--", color="gray", label="identity reference")
    ax.set_xlabel("distance ratio t")
    ax.set_ylabel("max image ratio")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_window_curves(rows: list[dict], path: str) -> None:
    fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharex=True)
    families = sorted({r["family"] for r in rows})
    for fam in families:
        sub = [r for r in rows if r["family"] == fam]
        w = [r["window_factor"] for r in sub]
        axes[0].loglog(w, [r["bilip_ratio"] for r in sub], "o-", label=fam)
        axes[1].loglog(w, [r["qs_excess"] for r in sub], "o-", label=fam)
    axes[0].set_ylabel("bilipschitz ratio b/a")
    axes[1].set_ylabel("max modulus excess")
    for ax in axes:
        ax.set_xlabel("window growth factor")
    axes[0].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_distortion_fit(rows: list[dict], slope: float, intercept: float, path: str) -> None:
    fig, ax = plt.subplots(figsize=(6, 4))
    x = np.array([r["ambient"] for r in rows])
    y = np.log([r["constrained"] for r in rows])
    ax.plot(x, y, "o", ms=4, color="#34618f", label="capped-copy pairs")
    ax.plot(x, slope * x + intercept, "-", color="#b14a2f",
            label=f"fit slope {slope:.4f}")
    ax.set_xlabel("ambient distance")
    ax.set_ylabel("ln(constrained distance)")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
