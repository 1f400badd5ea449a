"""Benchmark tasks: dataset generation, test evaluation, run aggregation.

Three tasks are built in: regression of the sine graph on equispaced points,
regression of a step function under uniform label noise, and classification
of a centered disk on the unit square.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import model
from .mesh import ControlTrajectory, TimeMesh
from .training import RunRecord
from . import integrators as integ


@dataclass(frozen=True, eq=False)
class Dataset:
    name: str
    xs: np.ndarray      # (N, n)
    ys: np.ndarray      # (N,)
    input_dim: int
    noise_width: float = 0.0

    def __post_init__(self):
        if not np.all(np.isfinite(self.ys)):
            raise ValueError("labels must be finite")

    @property
    def num_samples(self) -> int:
        return self.xs.shape[0]


def gen_sine(num_samples: int) -> Dataset:
    """Equidistant points x_i on [-pi, pi] with y_i = sin(x_i); deterministic."""
    if num_samples < 2:
        raise ValueError("sine task needs at least two samples")
    i = np.arange(1, num_samples + 1, dtype=float)
    xs = -math.pi + 2.0 * math.pi * (i - 1.0) / (num_samples - 1.0)
    return Dataset("sine", xs[:, None], np.sin(xs), input_dim=1)


def _step(x: np.ndarray) -> np.ndarray:
    return np.where(x <= 0.0, 0.5, -0.5)


def gen_step(num_samples: int, rng: np.random.Generator,
             noise_width: float = 0.2) -> Dataset:
    """Equispaced points on [-1, 1]; labels are the step plus uniform noise."""
    if num_samples < 2:
        raise ValueError("step task needs at least two samples")
    xs = np.linspace(-1.0, 1.0, num_samples)
    ys = _step(xs) + rng.uniform(-noise_width, noise_width, num_samples)
    return Dataset("step", xs[:, None], ys, input_dim=1, noise_width=noise_width)


def _disk(xs: np.ndarray) -> np.ndarray:
    return np.where(np.sum(xs * xs, axis=-1) <= 0.25, 1.0, 0.0)


def gen_classif(num_samples: int, rng: np.random.Generator) -> Dataset:
    """Uniform points on [-1, 1]^2 labeled by the radius-0.5 disk indicator."""
    if num_samples < 1:
        raise ValueError("classification task needs at least one sample")
    xs = rng.uniform(-1.0, 1.0, size=(num_samples, 2))
    return Dataset("classif", xs, _disk(xs), input_dim=2)


# ---------------------------------------------------------------------------
# task descriptors used by the command-line driver


@dataclass(frozen=True)
class Task:
    """One benchmark problem: generators, defaults and evaluation grid."""

    name: str
    input_dim: int
    default_width: int
    default_bounds: tuple[float, float]
    default_samples: int
    output_kind: str
    generate: Callable  # (num_samples, rng) -> Dataset
    sample_test: Callable  # (rng, num_samples) -> (xs, ys)
    grid: Callable  # () -> (xs, y_true)


def _sine_test(rng: np.random.Generator, n: int):
    xs = rng.uniform(-math.pi, math.pi, n)
    return xs[:, None], np.sin(xs)


def _step_test(rng: np.random.Generator, n: int):
    xs = rng.uniform(-1.0, 1.0, n)
    return xs[:, None], _step(xs) + rng.uniform(-0.2, 0.2, n)


def _classif_test(rng: np.random.Generator, n: int):
    xs = rng.uniform(-1.0, 1.0, size=(n, 2))
    return xs, _disk(xs)


def _sine_grid():
    xs = np.linspace(-math.pi, math.pi, 201)
    return xs[:, None], np.sin(xs)


def _step_grid():
    xs = np.linspace(-1.0, 1.0, 201)
    return xs[:, None], _step(xs)


def _classif_grid():
    """The 32 x 32 uniform evaluation grid on [-1, 1]^2 (1024 points)."""
    side = np.linspace(-1.0, 1.0, 32)
    g1, g2 = np.meshgrid(side, side, indexing="ij")
    xs = np.column_stack([g1.ravel(), g2.ravel()])
    return xs, _disk(xs)


TASKS = {
    "sine": Task("sine", 1, 3, (-1.0, 1.0), 20, "mean",
                 lambda n, rng: gen_sine(n), _sine_test, _sine_grid),
    "step": Task("step", 1, 3, (-1.0, 1.0), 800, "mean",
                 lambda n, rng: gen_step(n, rng), _step_test, _step_grid),
    "classif": Task("classif", 2, 6, (-2.0, 2.0), 800, "thresholded_mean",
                    lambda n, rng: gen_classif(n, rng), _classif_test, _classif_grid),
}


def evaluate_test_loss(control: ControlTrajectory, mesh: TimeMesh,
                       spec: model.ProblemSpec, xs, ys,
                       kind=integ.IntegratorKind.EXPLICIT_EULER) -> float:
    """Empirical cost of a trained control on a held-out set (smooth output)."""
    xs = np.atleast_2d(np.asarray(xs, float))
    if xs.shape[0] == 0:
        raise ValueError("empty test set")
    return model.empirical_cost(xs, ys, control, spec, mesh=mesh, kind=kind)


def predict_grid(control: ControlTrajectory, spec: model.ProblemSpec, xs,
                 kind=integ.IntegratorKind.EXPLICIT_EULER) -> np.ndarray:
    """Smooth network outputs on a batch of inputs."""
    u0 = model.lift_input(np.atleast_2d(np.asarray(xs, float)), spec.width)
    traj = integ.solve_fwd_controlled(control, u0, kind)
    return model.output_g(traj[-1], "mean")


def mismatch_rate(control: ControlTrajectory, spec: model.ProblemSpec,
                  xs, y_true) -> float:
    """0/1 error of the filtered prediction against true labels."""
    raw = predict_grid(control, spec, xs)
    return float(np.mean(model.prediction_filter(raw) != np.asarray(y_true)))


@dataclass
class AggregateStats:
    """Cross-run statistics; per-iteration arrays cover the longest run."""

    iterations: np.ndarray
    train_mean: np.ndarray
    train_min: np.ndarray
    train_max: np.ndarray
    test_mean: np.ndarray
    test_min: np.ndarray
    test_max: np.ndarray
    min_train_losses: np.ndarray
    test_at_best: np.ndarray

    @property
    def num_runs(self) -> int:
        return self.min_train_losses.size


def aggregate_runs(records: list[RunRecord]) -> AggregateStats:
    """Per-iteration mean and min/max envelope plus per-run best statistics.

    Runs may stop at different iterations; each iteration aggregates over the
    runs that reached it.
    """
    if not records:
        raise ValueError("need at least one run record")
    longest = max(len(r.rows) for r in records)
    iters = np.arange(longest)
    tr_mean = np.empty(longest)
    tr_min = np.empty(longest)
    tr_max = np.empty(longest)
    te_mean = np.empty(longest)
    te_min = np.empty(longest)
    te_max = np.empty(longest)
    for k in range(longest):
        tr = np.array([r.rows[k].train_loss for r in records if len(r.rows) > k])
        te = np.array([r.rows[k].test_loss for r in records if len(r.rows) > k])
        tr_mean[k], tr_min[k], tr_max[k] = tr.mean(), tr.min(), tr.max()
        te_mean[k], te_min[k], te_max[k] = te.mean(), te.min(), te.max()
    return AggregateStats(
        iterations=iters, train_mean=tr_mean, train_min=tr_min, train_max=tr_max,
        test_mean=te_mean, test_min=te_min, test_max=te_max,
        min_train_losses=np.array([r.min_train_loss for r in records]),
        test_at_best=np.array([r.test_loss_at_best for r in records]))
