"""Matplotlib figures written next to the CSV/JSON outputs."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .labels import CLASSES  # noqa: E402

_COLORS = {"AD": "#c0392b", "MCI": "#2471a3", "CN": "#229954"}
# no Software/date chunks, so reruns give identical PNG bytes
_PNG_META = {"Software": None}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=_PNG_META)
    plt.close(fig)


def plot_roc(curves, path, title="One-vs-all ROC"):
    fig, ax = plt.subplots(figsize=(4.5, 4.5))
    ax.plot([0, 1], [0, 1], ls="--", lw=0.8, color="0.6")
    for curve in curves:
        name = CLASSES[curve.label]
        ax.plot(curve.fpr, curve.tpr, lw=1.6, color=_COLORS[name], label=f"{name} (AUC {curve.auc:.3f})")
    ax.set_xlim(-0.01, 1.01)
    ax.set_ylim(-0.01, 1.01)
    ax.set_xlabel("False positive rate")
    ax.set_ylabel("True positive rate")
    ax.set_title(title)
    ax.legend(loc="lower right", frameon=False)
    _save(fig, path)


def plot_confusion(cm, path, title="Confusion matrix"):
    counts = np.asarray(cm.counts)
    fig, ax = plt.subplots(figsize=(4, 3.6))
    ax.imshow(counts, cmap="Blues")
    ax.set_xticks(range(len(CLASSES)), CLASSES)
    ax.set_yticks(range(len(CLASSES)), CLASSES)
    ax.set_xlabel("Predicted")
    ax.set_ylabel("True")
    ax.set_title(title)
    thresh = counts.max() / 2 if counts.size else 0
    for (i, j), v in np.ndenumerate(counts):
        ax.text(j, i, str(v), ha="center", va="center", color="white" if v > thresh else "black")
    _save(fig, path)


def plot_entropy_profile(rows, path, title="Slice entropy"):
    """Entropy against slice index per scan; selected slices are marked."""
    fig, ax = plt.subplots(figsize=(6, 3.2))
    scans = sorted({r[0] for r in rows})
    for scan in scans:
        pts = sorted((r[1], r[2], r[3]) for r in rows if r[0] == scan)
        idx = np.array([p[0] for p in pts])
        h = np.array([p[1] for p in pts])
        sel = np.array([p[2] for p in pts], dtype=bool)
        ax.plot(idx, h, lw=0.6, color="0.55", alpha=0.6)
        ax.plot(idx[sel], h[sel], ".", ms=2.5, color="#c0392b")
    ax.set_xlabel("Slice index")
    ax.set_ylabel("Entropy (bits)")
    ax.set_title(title)
    _save(fig, path)


def plot_regime_comparison(results, path, title="Macro recall by sampling regime"):
    """``results`` maps regime label -> list of macro recalls (one per seed)."""
    labels = list(results)
    fig, ax = plt.subplots(figsize=(4.5, 3.4))
    ax.boxplot([results[k] for k in labels])
    ax.set_xticks(range(1, len(labels) + 1), labels)
    ax.set_ylabel("Macro recall")
    ax.set_title(title)
    _save(fig, path)
