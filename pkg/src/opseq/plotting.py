"""Report figures written next to the CSV/JSON outputs."""
import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

RC = {
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 10,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "axes.spines.top": False,
    "axes.spines.right": False,
}
# fixed so repeated runs write identical PNGs
SAVE_KW = {"bbox_inches": "tight", "metadata": {"Software": None}}


def plot_training_curve(records, path, title="Training"):
    """Loss and training accuracy per epoch."""
    epochs = [r.epoch for r in records]
    with plt.rc_context(RC):
        fig, ax_loss = plt.subplots(figsize=(6, 3.6))
        ax_loss.plot(epochs, [r.loss for r in records], "o-", color="#0B6184", ms=3, label="loss")
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("cross-entropy loss")
        ax_acc = ax_loss.twinx()
        ax_acc.plot(epochs, [r.train_acc for r in records], "s--", color="#FF9200", ms=3,
                    label="train accuracy")
        ax_acc.set_ylim(0, 1.02)
        ax_acc.set_ylabel("accuracy")
        ax_acc.grid(False)
        lines = ax_loss.get_lines() + ax_acc.get_lines()
        ax_loss.legend(lines, [ln.get_label() for ln in lines], loc="center right", frameon=False)
        ax_loss.set_title(title)
        fig.savefig(path, **SAVE_KW)
        plt.close(fig)


def plot_confusion(counts, labels, path, title="Confusion matrix"):
    counts = np.asarray(counts)
    K = counts.shape[0]
    with plt.rc_context({**RC, "axes.grid": False}):
        side = max(3.5, 0.45 * K + 1.5)
        fig, ax = plt.subplots(figsize=(side, side))
        im = ax.imshow(counts, cmap="Blues")
        ax.set_xticks(range(K), labels, rotation=90)
        ax.set_yticks(range(K), labels)
        ax.set_xlabel("predicted")
        ax.set_ylabel("true")
        if K <= 20:
            thresh = counts.max() / 2 if counts.size else 0
            for i in range(K):
                for j in range(K):
                    if counts[i, j]:
                        ax.text(j, i, str(counts[i, j]), ha="center", va="center", fontsize=7,
                                color="white" if counts[i, j] > thresh else "black")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        ax.set_title(title)
        fig.savefig(path, **SAVE_KW)
        plt.close(fig)


def plot_sweep(rows, path, title="Accuracy by n-gram order"):
    """``rows``: iterable of ``(n, mean, max, min)``."""
    rows = sorted(rows)
    ns = [r[0] for r in rows]
    mean = np.array([r[1] for r in rows])
    hi = np.array([r[2] for r in rows])
    lo = np.array([r[3] for r in rows])
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(6, 3.6))
        ax.errorbar(ns, mean, yerr=[mean - lo, hi - mean], fmt="o-", color="#1B1BB3",
                    capsize=3, label="mean (min/max)")
        ax.set_xticks(ns)
        ax.set_xlabel("n")
        ax.set_ylabel("held-out accuracy")
        ax.set_ylim(0, 1.02)
        ax.legend(frameon=False)
        ax.set_title(title)
        fig.savefig(path, **SAVE_KW)
        plt.close(fig)


def plot_run_comparison(names, groups, path, title="Per-run accuracy by model"):
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(max(4, 0.8 * len(names) + 2), 3.6))
        ax.boxplot(groups)
        ax.set_xticks(range(1, len(names) + 1), names, rotation=30, ha="right")
        ax.set_ylabel("accuracy")
        ax.set_title(title)
        fig.savefig(path, **SAVE_KW)
        plt.close(fig)
