"""One-step time integrators, residual accuracy estimation and error bounds.

Two schemes are provided: explicit Euler (the ResNet scheme) and a two-stage
trapezoidal predictor-corrector of order two ("heun2").  Both fit the
projection framework in which the numerical solution satisfies
U' = (reconstructed rhs) on each interval; the residual estimator measures
the defect of that reconstruction at interval midpoints.
"""

from __future__ import annotations

import enum
import math
from typing import Callable, NamedTuple

import numpy as np

from .mesh import TimeMesh, ControlTrajectory, quadrature_midpoint
from . import model


class IntegratorKind(enum.Enum):
    EXPLICIT_EULER = "euler"
    HEUN2 = "heun"

    @staticmethod
    def parse(name: str) -> "IntegratorKind":
        for kind in IntegratorKind:
            if name in (kind.value, kind.name.lower()):
                return kind
        raise ValueError(f"unknown integrator {name!r}")


class NumericalOverflowError(RuntimeError):
    """Raised when a propagated state leaves the finite range."""

    def __init__(self, direction: str, interval: int, time: float):
        super().__init__(
            f"{direction} propagation produced non-finite values on interval "
            f"{interval} (t = {time:g})")
        self.direction = direction
        self.interval = interval
        self.time = time


def _check_finite(state, direction, interval, time):
    if not np.all(np.isfinite(state)):
        raise NumericalOverflowError(direction, interval, time)


def solve_fwd(rhs: Callable, x0, mesh: TimeMesh, kind: IntegratorKind) -> np.ndarray:
    """March u' = rhs(t, u) from u(0) = x0 across the mesh.

    Returns node values with shape (L+1,) + shape(x0).  rhs is evaluated only
    at node times.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    nodes = mesh.nodes
    out = np.empty((nodes.size,) + x0.shape)
    out[0] = x0
    _check_finite(x0, "forward", 0, 0.0)
    for l in range(mesh.num_intervals):
        t, t_next = nodes[l], nodes[l + 1]
        h = t_next - t
        u = out[l]
        k1 = np.asarray(rhs(t, u))
        if kind is IntegratorKind.EXPLICIT_EULER:
            out[l + 1] = u + h * k1
        else:
            k2 = np.asarray(rhs(t_next, u + h * k1))
            out[l + 1] = u + 0.5 * h * (k1 + k2)
        _check_finite(out[l + 1], "forward", l, t_next)
    return out


def solve_bwd(rhs: Callable, pT, mesh: TimeMesh, kind: IntegratorKind) -> np.ndarray:
    """March p' = rhs(t, p) backward from p(T) = pT; node indexing matches the mesh.

    Equivalent to solving the time-reflected problem forward and reflecting
    the result.
    """
    pT = np.asarray(pT, dtype=np.float64)
    nodes = mesh.nodes
    out = np.empty((nodes.size,) + pT.shape)
    out[-1] = pT
    _check_finite(pT, "backward", mesh.num_intervals - 1, mesh.horizon)
    for l in range(mesh.num_intervals - 1, -1, -1):
        t, t_next = nodes[l], nodes[l + 1]
        h = t_next - t
        p = out[l + 1]
        k1 = np.asarray(rhs(t_next, p))
        if kind is IntegratorKind.EXPLICIT_EULER:
            out[l] = p - h * k1
        else:
            k2 = np.asarray(rhs(t, p - h * k1))
            out[l] = p - 0.5 * h * (k1 + k2)
        _check_finite(out[l], "backward", l, t)
    return out


def solve_fwd_controlled(control: ControlTrajectory, u0, kind: IntegratorKind) -> np.ndarray:
    """Forward sweep of u' = tanh(A u + b) under a piecewise-constant control.

    Both stages of a step use the parameters of the interval being crossed,
    which keeps heun2 second order despite the control jumping at the nodes.
    u0 may carry leading batch axes.
    """
    u0 = np.asarray(u0, dtype=np.float64)
    widths = control.mesh.widths
    out = np.empty((widths.size + 1,) + u0.shape)
    out[0] = u0
    _check_finite(u0, "forward", 0, 0.0)
    for l in range(widths.size):
        h = widths[l]
        A, b = control.weights[l], control.biases[l]
        u = out[l]
        k1 = model.dynamics_f(u, A, b)
        if kind is IntegratorKind.EXPLICIT_EULER:
            out[l + 1] = u + h * k1
        else:
            k2 = model.dynamics_f(u + h * k1, A, b)
            out[l + 1] = u + 0.5 * h * (k1 + k2)
        _check_finite(out[l + 1], "forward", l, control.mesh.nodes[l + 1])
    return out


def solve_bwd_controlled(control: ControlTrajectory, states: np.ndarray, pT,
                         kind: IntegratorKind) -> np.ndarray:
    """Adjoint sweep p' = -grad_u H backward along frozen forward states.

    `states` is the time-major (L+1, ..., d) output of the forward sweep;
    `pT` is the terminal co-state -grad_u Phi.  Mirrors the forward stepping
    scheme interval by interval.
    """
    pT = np.asarray(pT, dtype=np.float64)
    widths = control.mesh.widths
    L = widths.size
    if states.shape[0] != L + 1:
        raise ValueError("state trajectory does not match the control mesh")
    out = np.empty((L + 1,) + pT.shape)
    out[-1] = pT
    _check_finite(pT, "backward", L - 1, control.mesh.horizon)
    for l in range(L - 1, -1, -1):
        h = widths[l]
        A, b = control.weights[l], control.biases[l]
        p = out[l + 1]
        k1 = -model.grad_u_hamiltonian(states[l + 1], p, A, b)
        if kind is IntegratorKind.EXPLICIT_EULER:
            out[l] = p - h * k1
        else:
            k2 = -model.grad_u_hamiltonian(states[l], p - h * k1, A, b)
            out[l] = p - 0.5 * h * (k1 + k2)
        _check_finite(out[l], "backward", l, control.mesh.nodes[l])
    return out


def residual_accuracy(rhs: Callable, trajectory: np.ndarray, mesh: TimeMesh,
                      kind: IntegratorKind) -> float:
    """Estimate the L2 defect between the dynamics and its reconstruction.

    The numerical trajectory is reconstructed piecewise linearly in time; the
    scheme's own rhs reconstruction (constant for Euler, linear-in-stages for
    heun2) is compared against rhs along that reconstruction at interval
    midpoints, and the squared defects are integrated by the midpoint rule.
    """
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if trajectory.shape[0] != mesh.nodes.size:
        raise ValueError("trajectory does not match the mesh")
    nodes = mesh.nodes
    sq = np.empty(mesh.num_intervals)
    for l in range(mesh.num_intervals):
        t, t_next = nodes[l], nodes[l + 1]
        h = t_next - t
        u, u_next = trajectory[l], trajectory[l + 1]
        k1 = np.asarray(rhs(t, u))
        if kind is IntegratorKind.EXPLICIT_EULER:
            recon_mid = k1
        else:
            k2 = np.asarray(rhs(t_next, u + h * k1))
            recon_mid = 0.5 * (k1 + k2)
        f_mid = np.asarray(rhs(0.5 * (t + t_next), 0.5 * (u + u_next)))
        sq[l] = np.sum((f_mid - recon_mid) ** 2)
    return math.sqrt(quadrature_midpoint(sq, mesh))


def gronwall_bound(eta: float, lipschitz: float, horizon: float) -> float:
    """Trajectory L2 error bound exp((2K+1)T/2) / sqrt(2K+1) * eta."""
    if eta < 0.0 or lipschitz < 0.0 or not horizon > 0.0:
        raise ValueError("eta and lipschitz must be nonnegative and horizon positive")
    c = 2.0 * lipschitz + 1.0
    return math.exp(0.5 * c * horizon) / math.sqrt(c) * eta


class RefinedSolve(NamedTuple):
    trajectory: np.ndarray
    mesh: TimeMesh
    eta: float
    converged: bool


def refine_to_accuracy(rhs: Callable, x0, mesh: TimeMesh, kind: IntegratorKind,
                       target_eta: float, max_intervals: int) -> RefinedSolve:
    """Uniformly double the mesh until the residual accuracy meets target_eta.

    Stops early when doubling would exceed max_intervals; `converged` reports
    whether the target was met.
    """
    if not target_eta > 0.0:
        raise ValueError("target_eta must be positive")
    traj = solve_fwd(rhs, x0, mesh, kind)
    eta = residual_accuracy(rhs, traj, mesh, kind)
    while eta > target_eta and 2 * mesh.num_intervals <= max_intervals:
        mesh = mesh.doubled()
        traj = solve_fwd(rhs, x0, mesh, kind)
        eta = residual_accuracy(rhs, traj, mesh, kind)
    return RefinedSolve(traj, mesh, eta, eta <= target_eta)
