"""Report figures rendered next to the CSV output.

Two files per experiment: loss_history.png (per-iteration train/test loss,
mean and min/max envelope over runs) and predictions.png (best-run
reconstructions against the ground truth).
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from . import tasks
from .integrators import IntegratorKind

_TRAIN_COLOR = "#c22f2f"
_TEST_COLOR = "#2f5fc2"


def _loss_figure(stats: tasks.AggregateStats, title: str, path: Path) -> None:
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    it = stats.iterations
    ax.fill_between(it, stats.train_min, stats.train_max,
                    color=_TRAIN_COLOR, alpha=0.18, lw=0)
    ax.plot(it, stats.train_mean, color=_TRAIN_COLOR, lw=1.4, label="train loss")
    if np.isfinite(stats.test_mean).any():
        ax.fill_between(it, stats.test_min, stats.test_max,
                        color=_TEST_COLOR, alpha=0.15, lw=0)
        ax.plot(it, stats.test_mean, color=_TEST_COLOR, lw=1.2, label="test loss")
    ax.set_yscale("log")
    ax.set_xlabel("iteration")
    ax.set_ylabel("empirical loss")
    ax.set_title(title)
    ax.legend(frameon=False)
    ax.grid(True, which="both", alpha=0.25, lw=0.4)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _predictions_1d(cfg, dataset, records, spec, path: Path) -> None:
    task = tasks.TASKS[cfg.experiment]
    grid_xs, y_true = task.grid()
    kind = IntegratorKind.parse(cfg.integrator)
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    preds = []
    for rec in records:
        if rec.aborted or rec.best_control is None:
            continue
        raw = tasks.predict_grid(rec.best_control, spec, grid_xs, kind)
        preds.append(raw)
        ax.plot(grid_xs[:, 0], raw, color="#888888", lw=0.7, alpha=0.55)
    if preds:
        ax.plot(grid_xs[:, 0], np.mean(preds, axis=0), color="#222222", lw=1.8,
                label="mean prediction")
    ax.plot(grid_xs[:, 0], y_true, color=_TRAIN_COLOR, lw=1.6, ls="--",
            label="target")
    ax.scatter(dataset.xs[:, 0], dataset.ys, s=12, color=_TEST_COLOR,
               alpha=0.6, zorder=3, label="training data")
    ax.set_xlabel("x")
    ax.set_ylabel("y")
    ax.set_title(f"{cfg.experiment}: best-control predictions per run")
    ax.legend(frameon=False)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def _predictions_2d(cfg, dataset, records, spec, path: Path) -> None:
    task = tasks.TASKS[cfg.experiment]
    grid_xs, y_true = task.grid()
    kind = IntegratorKind.parse(cfg.integrator)
    best = min((r for r in records if not r.aborted and r.best_control is not None),
               key=lambda r: r.min_train_loss, default=None)
    if best is None:
        return
    raw = tasks.predict_grid(best.best_control, spec, grid_xs, kind)
    side = int(round(np.sqrt(grid_xs.shape[0])))
    fig, axes = plt.subplots(1, 2, figsize=(9.0, 4.2), sharey=True)
    for ax, field, title in ((axes[0], raw, "best-run network output"),
                             (axes[1], y_true, "target labels")):
        im = ax.imshow(field.reshape(side, side).T, origin="lower",
                       extent=(-1, 1, -1, 1), cmap="coolwarm", vmin=0.0, vmax=1.0)
        ax.set_title(title)
        ax.set_xlabel("x1")
    axes[0].set_ylabel("x2")
    ones = dataset.ys > 0.5
    axes[0].scatter(dataset.xs[ones, 0], dataset.xs[ones, 1], marker="o",
                    facecolors="none", edgecolors="white", s=10, lw=0.5)
    axes[0].scatter(dataset.xs[~ones, 0], dataset.xs[~ones, 1], marker="x",
                    color="black", s=10, lw=0.5)
    fig.colorbar(im, ax=axes, shrink=0.85)
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_report(cfg, dataset, records, out_dir: Path) -> list[Path]:
    """Write loss_history.png and predictions.png; returns the paths."""
    completed = [r for r in records if not r.aborted]
    spec = cfg.problem_spec()
    paths = []
    loss_path = out_dir / "loss_history.png"
    _loss_figure(tasks.aggregate_runs(completed),
                 f"{cfg.experiment} / {cfg.strategy} ({len(completed)} runs)",
                 loss_path)
    paths.append(loss_path)
    pred_path = out_dir / "predictions.png"
    if tasks.TASKS[cfg.experiment].input_dim == 1:
        _predictions_1d(cfg, dataset, records, spec, pred_path)
    else:
        _predictions_2d(cfg, dataset, records, spec, pred_path)
    paths.append(pred_path)
    return paths
