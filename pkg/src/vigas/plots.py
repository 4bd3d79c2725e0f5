"""Static PNG figures: stereo waveforms, spectrograms and loss curves."""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .audio import stft  # noqa: E402


def plot_waveforms(path, waves: dict):
    """One row per labelled stereo clip, left and right channels side by side."""
    fig, axes = plt.subplots(len(waves), 2, figsize=(10, 2.2 * len(waves)), squeeze=False, sharey=True)
    for row, (label, w) in zip(axes, waves.items()):
        t = np.arange(w.frames) / w.sample_rate
        stereo = w.to_stereo().samples
        for ax, ch, name in zip(row, stereo, ("left", "right")):
            ax.plot(t, ch, lw=0.5)
            ax.set_title(f"{label} ({name})", fontsize=9)
            ax.set_xlabel("s")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_spectrograms(path, waves: dict, window_len: int = 512, hop: int = 128):
    fig, axes = plt.subplots(1, len(waves), figsize=(4 * len(waves), 3), squeeze=False)
    for ax, (label, w) in zip(axes[0], waves.items()):
        s = stft(w.mono(), window_len, hop)
        db = 20 * np.log10(np.abs(s.bins[0]) + 1e-8)
        ax.imshow(db, origin="lower", aspect="auto", vmin=db.max() - 80, vmax=db.max(),
                  extent=(0, w.frames / w.sample_rate, 0, w.sample_rate / 2000))
        ax.set_title(label, fontsize=9)
        ax.set_xlabel("s")
        ax.set_ylabel("kHz")
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)


def plot_loss(path, history: list):
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs, [r["train_loss"] for r in history], label="train")
    val = [r["val_loss"] for r in history]
    if not all(np.isnan(val)):
        ax.plot(epochs, val, label="val")
    ax.set_xlabel("epoch")
    ax.set_ylabel("magnitude L1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
