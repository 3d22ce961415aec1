"""Figures written next to the CSV/JSON reports."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 120


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=DPI, bbox_inches="tight")
    plt.close(fig)
    return path


def plot_confusion(confusion, classes, path, title="Confusion matrix"):
    conf = np.asarray(confusion, dtype=float)
    n = len(classes)
    size = max(4.0, 0.35 * n + 2.0)
    fig, ax = plt.subplots(figsize=(size, size))
    im = ax.imshow(conf, cmap="viridis", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(n))
    ax.set_yticks(range(n))
    ax.set_xticklabels(classes, rotation=90, fontsize=8)
    ax.set_yticklabels(classes, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    if n <= 15:
        for i in range(n):
            for j in range(n):
                ax.text(j, i, f"{conf[i, j]:.2f}", ha="center", va="center", fontsize=7,
                        color="w" if conf[i, j] < 0.6 else "k")
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, path)


def plot_cmc(cmc, path, title="Cumulative match characteristic"):
    cmc = np.asarray(cmc, dtype=float)
    ranks = np.arange(1, cmc.size + 1)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(ranks, cmc, marker="o", ms=3)
    ax.set_xlabel("rank")
    ax.set_ylabel("identification rate")
    ax.set_ylim(0.0, 1.02)
    ax.set_xlim(1, max(2, cmc.size))
    ax.grid(alpha=0.3)
    ax.set_title(title)
    return _save(fig, path)


def contribution_map(shape, rects, scores) -> np.ndarray:
    """Per-pixel mean contribution of the patches covering each pixel."""
    acc = np.zeros(shape[:2])
    hits = np.zeros(shape[:2])
    for r, s in zip(rects, scores):
        acc[r.y0 : r.y0 + r.side, r.x0 : r.x0 + r.side] += s
        hits[r.y0 : r.y0 + r.side, r.x0 : r.x0 + r.side] += 1
    return np.divide(acc, hits, out=np.full(acc.shape, np.nan), where=hits > 0)


def plot_heatmap(image, rects, scores, path, title=""):
    heat = contribution_map(image.shape, rects, scores)
    fig, ax = plt.subplots(figsize=(5, 5 * image.shape[0] / image.shape[1]))
    ax.imshow(image)
    im = ax.imshow(heat, cmap="jet", alpha=0.45, vmin=0.0, vmax=1.0)
    ax.set_axis_off()
    if title:
        ax.set_title(title, fontsize=9)
    fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
    return _save(fig, path)


def plot_ablation(rows, path, title="Ablation"):
    labels = [f"{r['axis']}: {r['variant']}" for r in rows]
    acc = [100.0 * r["mean_accuracy"] for r in rows]
    fig, ax = plt.subplots(figsize=(6, 0.3 * len(rows) + 1.5))
    y = np.arange(len(rows))
    ax.barh(y, acc, color="tab:blue")
    ax.set_yticks(y)
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("mean accuracy (%)")
    ax.set_xlim(0, 100)
    for yi, a in zip(y, acc):
        ax.text(a + 0.5, yi, f"{a:.1f}", va="center", fontsize=7)
    ax.set_title(title)
    return _save(fig, path)


def plot_benchmark(report, path):
    names = [f"1 x {sum(report['single']['atoms'])}",
             f"{report['multi']['books']} x {report['multi']['atoms'][0]}"]
    ms = [report["single"]["ms_per_patch"], report["multi"]["ms_per_patch"]]
    fig, ax = plt.subplots(figsize=(4, 3))
    ax.bar(names, ms, color=["tab:orange", "tab:green"])
    ax.set_ylabel("encoding time per patch (ms)")
    ratio = report.get("ratio")
    ax.set_title(f"{report['mode']} encoding, ratio {ratio:.2f}" if ratio else report["mode"])
    return _save(fig, path)


def plot_grid(values, rows, cols, path, row_name="C", col_name="alpha"):
    values = np.asarray(values, dtype=float)
    fig, ax = plt.subplots(figsize=(1.0 * len(cols) + 2, 0.6 * len(rows) + 1.5))
    im = ax.imshow(values, cmap="magma", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(len(cols)))
    ax.set_xticklabels([str(c) for c in cols])
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels([str(r) for r in rows])
    ax.set_xlabel(col_name)
    ax.set_ylabel(row_name)
    for i in range(len(rows)):
        for j in range(len(cols)):
            ax.text(j, i, f"{values[i, j]:.2f}", ha="center", va="center", fontsize=8,
                    color="w" if values[i, j] < 0.6 else "k")
    fig.colorbar(im, ax=ax)
    return _save(fig, path)
