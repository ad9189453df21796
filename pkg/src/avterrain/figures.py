"""Report figures written to PNG with the non-interactive Agg backend."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

MODE_COLOURS = {
    "switched": "#1b6ca8",
    "audio_only": "#e08a1e",
    "visual_only": "#6a9f3a",
    "concat": "#9c4f96",
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=100, metadata={"Software": None})
    plt.close(fig)
    return path


def suite_nmi_bars(scene_names, scores: dict, path) -> Path:
    """Grouped bars: one group per scene plus the mean, one bar per mode."""
    modes = list(scores)
    values = np.array([scores[m] for m in modes])            # (modes, scenes)
    values = np.concatenate([values, values.mean(axis=1, keepdims=True)], axis=1)
    names = list(scene_names) + ["mean"]
    x = np.arange(len(names))
    width = 0.8 / len(modes)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.55 * len(names)), 3.6))
    for i, m in enumerate(modes):
        ax.bar(x + (i - (len(modes) - 1) / 2) * width, values[i], width,
               label=m, color=MODE_COLOURS.get(m))
    ax.set_xticks(x)
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=7)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("NMI")
    ax.axvline(len(names) - 1.5, color="0.6", lw=0.8, ls="--")
    ax.legend(ncol=len(modes), fontsize=7, loc="upper center", bbox_to_anchor=(0.5, 1.14), frameon=False)
    fig.tight_layout()
    return _save(fig, path)


def label_timeline(rows: dict, path, title: str = "") -> Path:
    """Stack of per-frame label strips, e.g. {"truth": gt, "switched": pred}."""
    names = list(rows)
    n_frames = len(next(iter(rows.values())))
    fig, ax = plt.subplots(figsize=(8.0, 0.45 * len(names) + 0.9))
    cmap = plt.get_cmap("tab10")
    for i, name in enumerate(names):
        labels = np.asarray(rows[name])
        if len(labels) != n_frames:
            raise ValueError(f"row {name!r} has {len(labels)} frames, expected {n_frames}")
        ax.imshow(labels[None, :] % 10, aspect="auto", cmap=cmap, vmin=0, vmax=9,
                  interpolation="nearest", extent=(0, n_frames, i + 0.9, i + 0.1))
    ax.set_ylim(len(names), 0)
    ax.set_yticks(np.arange(len(names)) + 0.5)
    ax.set_yticklabels(names, fontsize=8)
    ax.set_xlabel("frame")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    return _save(fig, path)


def contingency_heatmap(table, pred_values, true_values, path) -> Path:
    table = np.asarray(table)
    fig, ax = plt.subplots(figsize=(1.0 + 0.5 * table.shape[1], 1.0 + 0.45 * table.shape[0]))
    ax.imshow(table, cmap="Blues")
    for (r, c), v in np.ndenumerate(table):
        colour = "white" if v > table.max() / 2 else "black"
        ax.text(c, r, str(v), ha="center", va="center", fontsize=7, color=colour)
    ax.set_xticks(range(table.shape[1]))
    ax.set_xticklabels([str(v) for v in true_values], fontsize=8)
    ax.set_yticks(range(table.shape[0]))
    ax.set_yticklabels([str(v) for v in pred_values], fontsize=8)
    ax.set_xlabel("true class")
    ax.set_ylabel("cluster")
    fig.tight_layout()
    return _save(fig, path)
