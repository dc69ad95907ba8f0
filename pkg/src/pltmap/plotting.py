"""Figures for the eval, train and map reports (PNG, Agg backend)."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

# fixed metadata keeps repeated renders byte-identical
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.savefig(path, dpi=110, metadata=_PNG_META)
    plt.close(fig)
    return path


def plot_predictions(cases, predictions, path, max_cases=4):
    """Electrogram, target PLT and prediction for the first few cases."""
    n = min(max_cases, len(cases))
    fig, axes = plt.subplots(n, 1, figsize=(9, 2.2 * n), sharex=True, squeeze=False)
    for ax, case, pred in zip(axes[:, 0], cases[:n], predictions[:n]):
        t = np.arange(len(pred)) * 1000.0 / case.target.sample_rate
        ax.plot(t, case.input.samples, color="0.7", lw=0.6, label="electrogram")
        ax.plot(t, case.target.samples, color="k", lw=1.0, label="target")
        ax.plot(t, pred, color="tab:red", lw=0.8, label="prediction")
        s = case.spec
        ax.set_title(f"FR {s.fr:g}  CV {s.cv:g}  h {s.h:g}  x {s.x:g}", fontsize=8)
        ax.set_ylim(-1.1, 1.1)
    axes[0, 0].legend(loc="upper right", fontsize=7, ncol=3)
    axes[-1, 0].set_xlabel("time (ms)")
    fig.tight_layout()
    return _save(fig, path)


def plot_training(report, path):
    fig, (a1, a2) = plt.subplots(1, 2, figsize=(9, 3))
    epochs = np.arange(1, len(report["train_loss"]) + 1)
    a1.semilogy(epochs, report["train_loss"], label="train")
    a1.semilogy(epochs, report["val_loss"], label="validation")
    if report.get("best_epoch") is not None:
        a1.axvline(report["best_epoch"] + 1, color="0.5", ls=":")
    a1.set_xlabel("epoch")
    a1.set_ylabel("MAE + MSE")
    a1.legend(fontsize=8)
    a2.semilogy(epochs, report["lr"])
    a2.set_xlabel("epoch")
    a2.set_ylabel("learning rate")
    fig.tight_layout()
    return _save(fig, path)


def plot_phase_maps(seq, indices, path, truth=None):
    """Phase frames (and optional voltage snapshots) with cores marked."""
    n = len(indices)
    rows = 2 if truth is not None else 1
    fig, axes = plt.subplots(rows, n, figsize=(2.2 * n, 2.3 * rows), squeeze=False)
    for j, k in enumerate(indices):
        ax = axes[0, j]
        ax.imshow(seq.frames[k], cmap="twilight", vmin=0, vmax=1, origin="upper")
        for r, c, q in seq.singularities[k]:
            ax.plot(c + 0.5, r + 0.5, "o", ms=5, mfc="none",
                    mec="w" if q > 0 else "k", mew=1.5)
        ax.set_title(f"{k * 1000.0 / seq.sample_rate:.0f} ms", fontsize=8)
        ax.set_xticks([])
        ax.set_yticks([])
        if truth is not None:
            axes[1, j].imshow(truth[j], cmap="inferno", vmin=-0.2, vmax=1.2, origin="upper")
            axes[1, j].set_xticks([])
            axes[1, j].set_yticks([])
    axes[0, 0].set_ylabel("PLT phase", fontsize=8)
    if truth is not None:
        axes[1, 0].set_ylabel("voltage", fontsize=8)
    fig.tight_layout()
    return _save(fig, path)


def plot_singularity_counts(seq, path):
    t = np.arange(seq.n_frames) * 1000.0 / seq.sample_rate
    fig, ax = plt.subplots(figsize=(8, 2.4))
    ax.step(t, seq.singularity_counts(), where="post", lw=0.8)
    ax.set_xlabel("time (ms)")
    ax.set_ylabel("cores")
    fig.tight_layout()
    return _save(fig, path)
