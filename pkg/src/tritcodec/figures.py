"""Matplotlib rendering of report figures next to the CSV outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def save_rd_figure(curves, path, title="rate-distortion"):
    """Plot one or more RD curves; ``curves`` maps label -> RdCurve."""
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    for label, curve in curves.items():
        ax.plot(curve.rates(), curve.qualities(), marker="o", markersize=3, label=label)
    ax.set_xlabel("rate (bpp)")
    ax.set_ylabel("PSNR (dB)")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    if len(curves) > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_training_curve(curve, path, title="training curve", ylabel="loss"):
    """Plot (epoch, train, holdout) rows from a training run."""
    epochs = [row[0] for row in curve]
    train = [row[1] for row in curve]
    hold = [row[2] for row in curve]
    fig, ax = plt.subplots(figsize=(6.0, 4.2))
    ax.plot(epochs[1:], train[1:], label="train")
    ax.plot(epochs, hold, label="holdout")
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def save_ablation_figure(result, path, title="ablation"):
    """Bar chart of mean BD-rates per method."""
    names = [row[0] for row in result.rows]
    values = [row[1] for row in result.rows]
    fig, ax = plt.subplots(figsize=(6.5, 4.2))
    colors = ["tab:gray" if v >= 0 else "tab:green" for v in values]
    ax.bar(names, values, color=colors)
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("BD-rate vs baseline (%)")
    ax.set_title(title)
    ax.tick_params(axis="x", rotation=20)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
