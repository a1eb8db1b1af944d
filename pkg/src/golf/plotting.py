"""PNG figures written next to the CSV outputs of ``fit`` and ``predict``."""

from __future__ import annotations

import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

__all__ = ["plot_traces", "plot_prediction"]

_META = {"Software": None}  # keep PNG bytes independent of the matplotlib version


def _save(fig, path):
    fig.savefig(path, dpi=100, metadata=_META)
    plt.close(fig)


def plot_traces(chain, path, max_factors=6):
    """Log-scale traces of the kernel parameters and the noise variance."""
    T = chain.completed
    it = np.arange(T + 1)
    k = min(chain.model.d, max_factors)
    fig, axes = plt.subplots(4, 1, figsize=(8, 9), sharex=True)
    axes[0].plot(it, np.log(chain.beta0[: T + 1]), lw=0.6)
    axes[0].set_ylabel("log beta0")
    axes[1].plot(it, np.log(chain.beta[: T + 1, :k]), lw=0.6)
    axes[1].set_ylabel("log beta")
    axes[2].plot(it, np.log(chain.eta[: T + 1, :k]), lw=0.6)
    axes[2].set_ylabel("log eta")
    axes[3].plot(it, np.log(chain.sigma2[: T + 1]), lw=0.6, color="k")
    axes[3].set_ylabel("log sigma0^2")
    axes[3].set_xlabel("iteration")
    burn = chain.config.burn_iters
    for ax in axes:
        ax.axvline(burn, color="0.6", ls="--", lw=0.8)
    if chain.model.d > k:
        axes[1].set_title(f"first {k} of {chain.model.d} factors", fontsize=9)
    fig.tight_layout()
    _save(fig, path)


def plot_prediction(pred, data, path, truth=None):
    """Observed data, predictive mean and interval width as images."""
    panels = [("observed", np.where(data.mask, data.values, np.nan)), ("predictive mean", pred.mean)]
    if pred.lo is not None:
        panels.append(("interval length (missing)", np.where(data.mask, np.nan, pred.hi - pred.lo)))
    if truth is not None:
        panels.append(("abs error (held out)", np.where(data.mask, np.nan, np.abs(pred.mean - truth))))
    fig, axes = plt.subplots(1, len(panels), figsize=(4 * len(panels), 3.6), squeeze=False)
    lim = np.nanpercentile(np.abs(pred.mean), 99) if np.isfinite(pred.mean).any() else 1.0
    for ax, (title, img) in zip(axes[0], panels):
        signed = title in ("observed", "predictive mean")
        im = ax.imshow(img, aspect="auto", interpolation="nearest",
                       cmap="RdBu_r" if signed else "viridis",
                       vmin=-lim if signed else None, vmax=lim if signed else None)
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("column")
        ax.set_ylabel("row")
        fig.colorbar(im, ax=ax, shrink=0.8)
    fig.tight_layout()
    _save(fig, path)


def figure_dir(out):
    d = os.path.join(out, "figures")
    os.makedirs(d, exist_ok=True)
    return d
