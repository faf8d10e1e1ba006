"""Report figures, rendered off-screen to image files."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_terms(row, path, weights=None):
    """Bar chart of per-term loss values (weighted contributions if ``weights`` given)."""
    names = [k for k in row if k != "total"]
    vals = [row[k] * (weights[k] if weights else 1.0) for k in names]
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.bar(names, np.maximum(vals, 1e-300))
    ax.set_yscale("log")
    ax.set_ylabel("weighted value" if weights else "value")
    ax.set_title(f"total = {row['total']:.4g}")
    return _save(fig, path)


def plot_refinement(history, path, translation_error=None):
    steps = np.arange(len(history))
    fig, axes = plt.subplots(1, 2 if translation_error is not None else 1, figsize=(10, 3.8), squeeze=False)
    ax = axes[0, 0]
    ax.semilogy(steps, [max(h.total, 1e-300) for h in history], "k", lw=2, label="total")
    for name in history[0].terms:
        vals = np.array([h.terms[name] for h in history])
        if np.any(vals > 0):
            ax.semilogy(steps, np.maximum(vals, 1e-300), lw=1, label=name)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.legend(fontsize=7, ncol=2)
    if translation_error is not None:
        ax = axes[0, 1]
        ax.plot(steps, translation_error)
        ax.set_xlabel("step")
        ax.set_ylabel("translation error")
    return _save(fig, path)


def plot_gradcheck(rows, path, tol):
    names = [r["term"] for r in rows]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(x - 0.2, [max(r["depth_max_rel_error"], 1e-17) for r in rows], 0.4, label="depth")
    ax.bar(x + 0.2, [max(r["pose_max_rel_error"], 1e-17) for r in rows], 0.4, label="pose")
    ax.axhline(tol, color="r", ls="--", label="tolerance")
    ax.set_xticks(x, names)
    ax.set_yscale("log")
    ax.set_ylabel("max relative error")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_trajectories(gt, est_aligned, path):
    """Top-down (x-z) view of ground truth and aligned estimate."""
    fig, ax = plt.subplots(figsize=(5, 5))
    ax.plot(gt[:, 0], gt[:, 2], "k-", label="ground truth")
    ax.plot(est_aligned[:, 0], est_aligned[:, 2], "C1--", label="estimate (aligned)")
    ax.set_aspect("equal", "datalim")
    ax.set_xlabel("x")
    ax.set_ylabel("z")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_uncertainty(rows, posteriors, path):
    """Eigenvalue sweep plus the posterior density of each swept angle."""
    n = len(posteriors)
    fig = plt.figure(figsize=(3 * max(n, 2), 6))
    ax = fig.add_subplot(2, 1, 1)
    ang = [r[0] for r in rows]
    ax.semilogy(ang, [r[1] for r in rows], "o-")
    ax.set_xlabel("ray intersection angle (deg)")
    ax.set_ylabel("largest covariance eigenvalue")
    for i, (a, post) in enumerate(posteriors):
        sub = fig.add_subplot(2, n, n + i + 1)
        sub.imshow(post.density, origin="lower", cmap="magma",
                   extent=(post.xs[0], post.xs[-1], post.ys[0], post.ys[-1]), aspect="equal")
        sub.set_title(f"{a:g} deg", fontsize=8)
        sub.tick_params(labelsize=6)
    return _save(fig, path)


def plot_frames(images, depths, path):
    n = len(images)
    fig, axes = plt.subplots(2, n, figsize=(3 * n, 5.5), squeeze=False)
    for i in range(n):
        img = np.asarray(images[i])
        axes[0, i].imshow(img.mean(0) if img.ndim == 3 else img, cmap="gray", vmin=0, vmax=1)
        axes[0, i].set_title(f"frame {i}", fontsize=8)
        im = axes[1, i].imshow(depths[i], cmap="viridis")
        fig.colorbar(im, ax=axes[1, i], fraction=0.046)
        for ax in axes[:, i]:
            ax.set_axis_off()
    return _save(fig, path)
