"""Figures written next to the delimited reports."""

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_fma_report(report, path):
    """Bar chart of FMA per frame for each layer, log scale."""
    idx = [l.index for l in report.per_layer]
    vals = [l.fma_per_frame for l in report.per_layer]
    colors = ["C0" if l.kind == "conv2d" else "C1" for l in report.per_layer]
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(idx, vals, color=colors)
    ax.set_yscale("log")
    ax.set_xlabel("layer")
    ax.set_ylabel("FMA / frame")
    ax.set_title(f"{report.model}: {report.total_per_second / 1e6:.0f}M FMA/s "
                 f"({report.freq_bins} bins, {report.frame_rate_hz:g} frames/s)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path):
    epochs = [h[0] for h in history]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(epochs[1:], [h[1] for h in history[1:]], label="train")
    ax.plot(epochs, [h[2] for h in history], label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("spectrogram MSE")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
