"""Problem definition: dynamics, Hamiltonians, terminal loss and output maps.

The feed-forward dynamics is u' = tanh(A u + b) with per-layer parameters
theta = (A, b) constrained to a box.  The Hamiltonian is H = p . f(u, theta)
(no running cost), and the augmented Hamiltonian adds quadratic penalties that
tie candidate parameters to the computed state and co-state slopes.

All functions broadcast over leading axes: u, p, v, q accept shape (..., d)
and A, b accept (..., d, d) / (..., d), so single-sample and batched calls go
through the same code.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

OUTPUT_KINDS = ("mean", "thresholded_mean")


@dataclass(frozen=True)
class ProblemSpec:
    """Static description of one learning problem."""

    width: int
    horizon: float
    bounds: tuple[float, float]
    rho: float
    output_kind: str = "mean"
    activation: str = "tanh"
    regularizer: str = "zero"

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("width must be positive")
        if not self.horizon > 0.0:
            raise ValueError("horizon must be positive")
        if not self.bounds[0] < self.bounds[1]:
            raise ValueError("bounds must satisfy lo < hi")
        if self.rho < 0.0:
            raise ValueError("rho must be nonnegative")
        if self.output_kind not in OUTPUT_KINDS:
            raise ValueError(f"unknown output kind {self.output_kind!r}")
        if self.activation != "tanh":
            raise ValueError("only the tanh activation is supported")
        if self.regularizer != "zero":
            raise ValueError("only the zero regularizer is supported")


def _check_dims(u, A, b):
    if A.shape[-1] != A.shape[-2]:
        raise ValueError(f"A must be square, got shape {A.shape}")
    if u.shape[-1] != A.shape[-1] or b.shape[-1] != A.shape[-1]:
        raise ValueError(
            f"dimension mismatch: u {u.shape}, A {A.shape}, b {b.shape}")


def dynamics_f(u, A, b) -> np.ndarray:
    """tanh(A u + b), the layer velocity field; entries lie in (-1, 1)."""
    u, A, b = np.asarray(u, float), np.asarray(A, float), np.asarray(b, float)
    _check_dims(u, A, b)
    z = np.einsum("...ij,...j->...i", A, u) + b
    return np.tanh(z)


def hamiltonian(u, p, A, b) -> np.ndarray:
    """p . f(u, theta); the running cost is zero."""
    p = np.asarray(p, float)
    f = dynamics_f(u, A, b)
    if p.shape[-1] != f.shape[-1]:
        raise ValueError(f"co-state dimension {p.shape} does not match state")
    return np.einsum("...i,...i->...", p, f)


def grad_u_hamiltonian(u, p, A, b) -> np.ndarray:
    """State gradient A^T (p * sech^2(A u + b))."""
    u, p = np.asarray(u, float), np.asarray(p, float)
    A, b = np.asarray(A, float), np.asarray(b, float)
    _check_dims(u, A, b)
    if p.shape[-1] != A.shape[-1]:
        raise ValueError("co-state dimension mismatch")
    z = np.einsum("...ij,...j->...i", A, u) + b
    phi = np.tanh(z)
    w = p * (1.0 - phi * phi)
    return np.einsum("...ji,...j->...i", A, w)


def grad_theta_hamiltonian(u, p, A, b) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the Hamiltonian in (A, b): (w u^T, w) with w = p * sech^2."""
    u, p = np.asarray(u, float), np.asarray(p, float)
    A, b = np.asarray(A, float), np.asarray(b, float)
    _check_dims(u, A, b)
    z = np.einsum("...ij,...j->...i", A, u) + b
    phi = np.tanh(z)
    w = p * (1.0 - phi * phi)
    return np.einsum("...i,...j->...ij", w, u), w


def augmented_hamiltonian(u, p, A, b, v, q, rho: float) -> np.ndarray:
    """H minus rho/2 penalties on the slope residuals v - f and q + grad_u H."""
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    v, q = np.asarray(v, float), np.asarray(q, float)
    f = dynamics_f(u, A, b)
    gu = grad_u_hamiltonian(u, p, A, b)
    h = np.einsum("...i,...i->...", np.asarray(p, float), f)
    pen_v = np.sum((v - f) ** 2, axis=-1)
    pen_q = np.sum((q + gu) ** 2, axis=-1)
    return h - 0.5 * rho * (pen_v + pen_q)


def output_g(u_T, kind: str) -> np.ndarray:
    """Read out a scalar from the terminal state.

    "mean" averages the coordinates; "thresholded_mean" applies the Heaviside
    step (with H(0) = 1) to that mean.  The 0/1 prediction filter used for
    classification scoring lives in `prediction_filter`.
    """
    u_T = np.asarray(u_T, float)
    m = u_T.mean(axis=-1)
    if kind == "mean":
        return m
    if kind == "thresholded_mean":
        return np.where(m >= 0.0, 1.0, 0.0)
    raise ValueError(f"unknown output kind {kind!r}")


def prediction_filter(raw) -> np.ndarray:
    """Evaluation-time 0/1 filter x -> H(x - 0.5) applied to network outputs."""
    return np.where(np.asarray(raw, float) >= 0.5, 1.0, 0.0)


def terminal_loss_and_grad(u_T, y) -> tuple[np.ndarray, np.ndarray]:
    """Squared-error terminal loss 0.5 (mean(u_T) - y)^2 and its u-gradient.

    Training always differentiates through the smooth mean output, also for
    classification tasks where predictions are thresholded afterwards.
    """
    u_T = np.asarray(u_T, float)
    y = np.asarray(y, float)
    d = u_T.shape[-1]
    res = u_T.mean(axis=-1) - y
    loss = 0.5 * res * res
    grad = np.broadcast_to((res / d)[..., None], u_T.shape).copy()
    return loss, grad


def lift_input(x, width: int) -> np.ndarray:
    """Tile an n-dimensional input into the d-dimensional initial state."""
    x = np.atleast_1d(np.asarray(x, float))
    n = x.shape[-1]
    if width % n != 0:
        raise ValueError(f"width {width} is not a multiple of the input dimension {n}")
    reps = (1,) * (x.ndim - 1) + (width // n,)
    return np.tile(x, reps)


def empirical_cost(xs, ys, control, spec: ProblemSpec, mesh=None, kind=None) -> float:
    """Mean terminal loss of the forward-propagated samples.

    Solves the state dynamics for every sample on `mesh` (the control's own
    mesh by default; a finer mesh prolongs the control first) and averages the
    terminal losses.  The regularizer is zero, so this is the whole cost.
    """
    from . import integrators as integ
    from .mesh import prolong_control

    xs = np.atleast_2d(np.asarray(xs, float))
    ys = np.atleast_1d(np.asarray(ys, float))
    if xs.shape[0] == 0:
        raise ValueError("empty sample set")
    if ys.shape[0] != xs.shape[0]:
        raise ValueError("sample/label count mismatch")
    if kind is None:
        kind = integ.IntegratorKind.EXPLICIT_EULER
    if mesh is not None and mesh != control.mesh:
        control = prolong_control(control, mesh)
    u0 = lift_input(xs, spec.width)
    traj = integ.solve_fwd_controlled(control, u0, kind)
    loss, _ = terminal_loss_and_grad(traj[-1], ys)
    return float(loss.mean())
