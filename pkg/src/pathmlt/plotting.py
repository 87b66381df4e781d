"""Static SVG figures: the power curve and a witness likelihood path."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .experiment import PowerTable  # noqa: E402
from .witness import DivergenceWitness, loglik_along_path  # noqa: E402

# fixed ids and no timestamp, so identical inputs give identical files
_SVG_RC = {"svg.hashsalt": "pathmlt", "svg.fonttype": "none"}
_SVG_META = {"Date": None, "Creator": None}


def _save(fig, path) -> None:
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)


def plot_power(table: PowerTable, path) -> None:
    """Rejection rate against lambda_12, one line per sample size."""
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        for n in sorted({r.n for r in table.rows}):
            rows = sorted((r for r in table.rows if r.n == n), key=lambda r: r.lambda12)
            x = [r.lambda12 for r in rows]
            y = [r.rate for r in rows]
            err = [r.se for r in rows]
            ax.errorbar(x, y, yerr=err, marker="o", capsize=2, label=f"n = {n}")
        alpha = table.metadata.get("alpha")
        if alpha is not None:
            ax.axhline(alpha, color="grey", linestyle="--", linewidth=0.8)
        ax.set_xlabel(r"$\lambda_{12}$")
        ax.set_ylabel("rejection rate")
        ax.set_ylim(0.0, 1.0)
        ax.legend()
        fig.tight_layout()
        _save(fig, path)


def plot_witness(w: DivergenceWitness, path, t_max: float = 1e6) -> None:
    """Log-likelihood along the witness path on a log-spaced grid."""
    t = np.concatenate([[0.0], np.logspace(-3, np.log10(t_max), 200)])
    values = [loglik_along_path(w, float(x)) for x in t]
    with plt.rc_context(_SVG_RC):
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(t + 1.0, values)
        ax.set_xscale("log")
        ax.set_xlabel("1 + t")
        ax.set_ylabel("log-likelihood")
        ax.set_title(f"component {w.component_index}, slope {w.slope:.3g}")
        fig.tight_layout()
        _save(fig, path)
