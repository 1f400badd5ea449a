"""Time meshes, control and state trajectory containers, and mesh quadrature.

A mesh partitions the horizon [0, T] into L intervals; one interval is one
network layer.  Controls are piecewise constant per interval.  All containers
are immutable after construction and safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TimeMesh:
    """Ordered time nodes t_0 < t_1 < ... < t_L on [0, T]."""

    nodes: np.ndarray

    def __post_init__(self):
        nodes = _readonly(self.nodes)
        object.__setattr__(self, "nodes", nodes)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("mesh needs at least two nodes")
        if nodes[0] != 0.0:
            raise ValueError("mesh must start at t=0")
        if not np.all(np.diff(nodes) > 0.0):
            raise ValueError("mesh nodes must be strictly increasing")

    @property
    def num_intervals(self) -> int:
        return self.nodes.size - 1

    @property
    def horizon(self) -> float:
        return float(self.nodes[-1])

    @property
    def widths(self) -> np.ndarray:
        """Interval lengths h_l = t_l - t_{l-1}."""
        return np.diff(self.nodes)

    @property
    def midpoints(self) -> np.ndarray:
        return 0.5 * (self.nodes[:-1] + self.nodes[1:])

    def interval_of(self, t) -> np.ndarray:
        """Index of the interval [t_i, t_{i+1}) containing t (last one closed)."""
        idx = np.searchsorted(self.nodes, t, side="right") - 1
        return np.clip(idx, 0, self.num_intervals - 1)

    def doubled(self) -> "TimeMesh":
        """Mesh with every interval split at its midpoint."""
        fine = np.empty(2 * self.num_intervals + 1)
        fine[::2] = self.nodes
        fine[1::2] = self.midpoints
        return TimeMesh(fine)

    def __eq__(self, other) -> bool:
        return isinstance(other, TimeMesh) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


def make_uniform_mesh(horizon: float, num_intervals: int) -> TimeMesh:
    """Equispaced mesh with exact endpoints 0 and `horizon`."""
    if not horizon > 0.0:
        raise ValueError(f"horizon must be positive, got {horizon}")
    if num_intervals < 1:
        raise ValueError(f"need at least one interval, got {num_intervals}")
    return TimeMesh(np.linspace(0.0, horizon, num_intervals + 1))


@dataclass(frozen=True, eq=False)
class ControlTrajectory:
    """Piecewise-constant control: one (A, b) record per mesh interval.

    `weights` has shape (L, d, d) and `biases` (L, d); every entry lies in the
    closed box [bounds[0], bounds[1]].
    """

    mesh: TimeMesh
    weights: np.ndarray
    biases: np.ndarray
    bounds: tuple[float, float]

    def __post_init__(self):
        weights = _readonly(self.weights)
        biases = _readonly(self.biases)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "biases", biases)
        object.__setattr__(self, "bounds", (float(self.bounds[0]), float(self.bounds[1])))
        L = self.mesh.num_intervals
        if weights.ndim != 3 or weights.shape[0] != L or weights.shape[1] != weights.shape[2]:
            raise ValueError(f"weights must have shape (L, d, d) with L={L}, got {weights.shape}")
        if biases.shape != (L, weights.shape[1]):
            raise ValueError(f"biases must have shape (L, d), got {biases.shape}")
        lo, hi = self.bounds
        if not lo < hi:
            raise ValueError("bounds must satisfy lo < hi")
        if weights.size and (weights.min() < lo or weights.max() > hi
                             or biases.min() < lo or biases.max() > hi):
            raise ValueError("control parameters violate the box bounds")

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def params_at(self, t) -> tuple[np.ndarray, np.ndarray]:
        """(A, b) of the interval containing time t."""
        i = self.mesh.interval_of(t)
        return self.weights[i], self.biases[i]

    def replace(self, weights: np.ndarray, biases: np.ndarray) -> "ControlTrajectory":
        return ControlTrajectory(self.mesh, weights, biases, self.bounds)

    @staticmethod
    def zeros(mesh: TimeMesh, width: int, bounds: tuple[float, float]) -> "ControlTrajectory":
        L = mesh.num_intervals
        return ControlTrajectory(mesh, np.zeros((L, width, width)), np.zeros((L, width)), bounds)


def prolong_control(control: ControlTrajectory, fine: TimeMesh) -> ControlTrajectory:
    """Transfer a control to a finer mesh by interval-midpoint injection.

    Each fine interval takes the parameters of the coarse interval containing
    its midpoint, so on nested meshes the control is unchanged as a function
    of time.
    """
    if fine.num_intervals < control.mesh.num_intervals:
        raise ValueError("target mesh must have at least as many intervals")
    if fine.horizon != control.mesh.horizon:
        raise ValueError(
            f"horizon mismatch: control on [0, {control.mesh.horizon}], "
            f"target mesh on [0, {fine.horizon}]")
    src = control.mesh.interval_of(fine.midpoints)
    return ControlTrajectory(fine, control.weights[src], control.biases[src], control.bounds)


@dataclass(frozen=True, eq=False)
class BatchTrajectory:
    """State (or co-state) values at every mesh node for every sample.

    `values` has shape (N, L+1, d): sample, node, coordinate.
    """

    mesh: TimeMesh
    values: np.ndarray

    def __post_init__(self):
        values = _readonly(self.values)
        object.__setattr__(self, "values", values)
        if values.ndim != 3:
            raise ValueError(f"values must be (N, L+1, d), got shape {values.shape}")
        if values.shape[1] != self.mesh.nodes.size:
            raise ValueError(
                f"node dimension {values.shape[1]} does not match mesh "
                f"with {self.mesh.nodes.size} nodes")
        if not np.all(np.isfinite(values)):
            raise ValueError("trajectory contains non-finite entries")

    @property
    def num_samples(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    @property
    def terminal(self) -> np.ndarray:
        """Values at the final node, shape (N, d)."""
        return self.values[:, -1, :]

    @staticmethod
    def from_time_major(mesh: TimeMesh, arr: np.ndarray) -> "BatchTrajectory":
        """Wrap an (L+1, N, d) array as produced by the integrators."""
        return BatchTrajectory(mesh, np.ascontiguousarray(np.moveaxis(arr, 0, 1)))


def quadrature_l2_sq(values_at_nodes, mesh: TimeMesh) -> float:
    """Trapezoidal approximation of the time integral of node values.

    Exact for node-wise linear integrands; callers pass squared norms to
    obtain squared L2 quantities.
    """
    v = np.asarray(values_at_nodes, dtype=np.float64)
    if v.shape != mesh.nodes.shape:
        raise ValueError(f"expected {mesh.nodes.size} node values, got shape {v.shape}")
    return float(np.trapezoid(v, mesh.nodes))


def quadrature_midpoint(values_at_midpoints, mesh: TimeMesh) -> float:
    """Midpoint-rule integral from one value per mesh interval."""
    v = np.asarray(values_at_midpoints, dtype=np.float64)
    if v.shape != (mesh.num_intervals,):
        raise ValueError(f"expected {mesh.num_intervals} interval values, got shape {v.shape}")
    return float(np.dot(mesh.widths, v))
