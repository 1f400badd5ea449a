"""Per-node maximization of the sample-averaged augmented Hamiltonian.

At every mesh node the update step solves, approximately, a box-constrained
nonconvex maximization over the layer parameters (A, b).  The search combines
a multistart candidate list (the incumbent, the running best, and scaled
random perturbations and fresh draws at six magnitudes) with projected
gradient ascent refinement of the most promising candidates.

The incumbent is always refined and always enters the final comparison, so
the returned objective never falls below the incumbent's value; ties keep
the incumbent.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

try:
    if os.environ.get("MSANET_FORCE_NUMPY"):
        _kernels = None
    else:
        from . import _kernels
except ImportError:  # pragma: no cover - numba is a hard dependency normally
    _kernels = None


@dataclass(frozen=True)
class MultistartConfig:
    """Candidate-list shape: two families (perturbed best, fresh) per scale."""

    n_scales: int = 6
    n_draws: int = 25

    @property
    def num_candidates(self) -> int:
        return 2 + 2 * self.n_scales * self.n_draws


@dataclass(frozen=True)
class AscentConfig:
    """Projected-gradient-ascent budget for candidate refinement."""

    max_evals: int = 12
    tolerance: float = 1e-9
    top_k: int = 4
    screen_samples: int = 64


def _activation(theta_flat: np.ndarray, u: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """tanh(A u + b) for every (node, candidate, sample).

    theta_flat: (M, C, d*d + d) with A row-major first; u: (M, N, d).
    Returns (phi, A) with phi (M, C, N, d) and A (M, C, d, d), both contiguous.
    """
    M, C, _ = theta_flat.shape
    N = u.shape[1]
    A = np.ascontiguousarray(theta_flat[:, :, :d * d].reshape(M, C, d, d))
    b = theta_flat[:, :, d * d:]
    z = np.matmul(A.reshape(M, C * d, d), u.transpose(0, 2, 1))
    z = np.ascontiguousarray(z.reshape(M, C, d, N).transpose(0, 1, 3, 2))
    z += b[:, :, None, :]
    np.tanh(z, out=z)
    return z, A


def _objective_np(phi, A, p, v, q, rho):
    w = p[:, None] * (1.0 - phi * phi)
    h = np.einsum("mid,mcid->mci", p, phi)
    pen_v = np.sum((v[:, None] - phi) ** 2, axis=-1)
    r = q[:, None] + np.einsum("mckj,mcik->mcij", A, w)
    pen_q = np.sum(r * r, axis=-1)
    return np.mean(h - 0.5 * rho * (pen_v + pen_q), axis=-1)


def _gradient_np(phi, A, u, p, v, q, rho):
    s = 1.0 - phi * phi
    w = p[:, None] * s
    r = q[:, None] + np.einsum("mckj,mcik->mcij", A, w)
    ar = np.einsum("mcjk,mcik->mcij", A, r)
    big_g = w + rho * (v[:, None] - phi) * s + 2.0 * rho * w * phi * ar
    gA = (np.einsum("mcij,mik->mcjk", big_g, u)
          - rho * np.einsum("mcij,mcik->mcjk", w, r)) / u.shape[1]
    gb = big_g.mean(axis=2)
    return gA, gb


def objective_batch(theta_flat, u, p, v, q, rho: float) -> np.ndarray:
    """Sample-averaged augmented Hamiltonian, shape (M, C)."""
    d = u.shape[-1]
    phi, A = _activation(theta_flat, u, d)
    if _kernels is not None:
        return _kernels.aug_ham_from_phi(phi, A, p, v, q, rho)
    return _objective_np(phi, A, p, v, q, rho)


def gradient_batch(theta_flat, u, p, v, q, rho: float) -> np.ndarray:
    """Gradient of the objective in the flattened (A, b) layout, (M, C, D)."""
    d = u.shape[-1]
    M, C, D = theta_flat.shape
    phi, A = _activation(theta_flat, u, d)
    if _kernels is not None:
        gA, gb = _kernels.aug_ham_grad_from_phi(phi, A, u, p, v, q, rho)
    else:
        gA, gb = _gradient_np(phi, A, u, p, v, q, rho)
    out = np.empty((M, C, D))
    out[:, :, :d * d] = gA.reshape(M, C, d * d)
    out[:, :, d * d:] = gb
    return out


def build_candidates(theta_cur: np.ndarray, theta_best: np.ndarray,
                     bounds: tuple[float, float], rng: np.random.Generator,
                     multistart: MultistartConfig) -> np.ndarray:
    """Multistart list for one node: incumbent, best, and scaled draws.

    For each scale 10^(-2q), q = 0..n_scales-1, the list holds n_draws
    perturbations of the running best and n_draws fresh draws, all clipped to
    the box.
    """
    lo, hi = bounds
    dim = theta_cur.size
    out = np.empty((multistart.num_candidates, dim))
    out[0] = theta_cur
    out[1] = theta_best
    pos = 2
    for scale_exp in range(multistart.n_scales):
        scale = 10.0 ** (-2 * scale_exp)
        perturb = rng.uniform(lo, hi, size=(multistart.n_draws, dim))
        fresh = rng.uniform(lo, hi, size=(multistart.n_draws, dim))
        out[pos:pos + multistart.n_draws] = theta_best + scale * perturb
        pos += multistart.n_draws
        out[pos:pos + multistart.n_draws] = scale * fresh
        pos += multistart.n_draws
    np.clip(out, lo, hi, out=out)
    return out


def _screen_indices(num_samples: int, screen_samples: int) -> np.ndarray:
    """Deterministic evenly-strided subsample used to rank candidates."""
    if num_samples <= screen_samples:
        return np.arange(num_samples)
    return (np.arange(screen_samples) * num_samples) // screen_samples


def _pga(theta, u, p, v, q, bounds, rho, ascent: AscentConfig):
    """Projected gradient ascent with backtracking on a candidate batch.

    theta: (M, K, D).  Returns the refined batch and its objective values,
    all evaluated through `objective_batch` so comparisons are exact.
    """
    lo, hi = bounds
    obj = objective_batch(theta, u, p, v, q, rho)
    alpha = None
    for _ in range(ascent.max_evals):
        grad = gradient_batch(theta, u, p, v, q, rho)
        if alpha is None:
            gmax = np.abs(grad).max(axis=-1)
            alpha = 0.25 * (hi - lo) / np.maximum(gmax, 1e-12)
        step = np.clip(theta + grad, lo, hi) - theta
        if np.abs(step).max() <= ascent.tolerance:
            break
        proposal = np.clip(theta + alpha[..., None] * grad, lo, hi)
        obj_prop = objective_batch(proposal, u, p, v, q, rho)
        accept = obj_prop > obj
        theta = np.where(accept[..., None], proposal, theta)
        obj = np.where(accept, obj_prop, obj)
        alpha = np.where(accept, 1.3 * alpha, 0.5 * alpha)
    return theta, obj


def maximize_nodes_batch(u, p, v, q, theta_cur, theta_best,
                         bounds: tuple[float, float], rho: float,
                         node_rngs, multistart: MultistartConfig,
                         ascent: AscentConfig):
    """Maximize the node objective at every mesh node of one iteration.

    u, p, v, q: (M, N, d) frozen states, co-states and discrete slopes;
    theta_cur, theta_best: (M, D) flattened incumbent and running-best
    parameters; node_rngs: one Generator per node.

    Returns (theta_new (M, D), obj_incumbent (M,), obj_returned (M,)).
    The guarantee obj_returned >= obj_incumbent holds exactly.
    """
    M, N, d = u.shape
    D = theta_cur.shape[1]
    cands = np.empty((M, multistart.num_candidates, D))
    for m in range(M):
        cands[m] = build_candidates(theta_cur[m], theta_best[m], bounds,
                                    node_rngs[m], multistart)

    idx = _screen_indices(N, ascent.screen_samples)
    u_s = np.ascontiguousarray(u[:, idx])
    p_s = np.ascontiguousarray(p[:, idx])
    v_s = np.ascontiguousarray(v[:, idx])
    q_s = np.ascontiguousarray(q[:, idx])
    scores = objective_batch(cands, u_s, p_s, v_s, q_s, rho)

    # incumbent and running best are always refined; fill with the best others
    k = min(ascent.top_k, multistart.num_candidates)
    n_extra = max(k - 2, 0)
    refine = np.empty((M, 2 + n_extra, D))
    refine[:, 0] = cands[:, 0]
    refine[:, 1] = cands[:, 1]
    if n_extra:
        order = np.argsort(-scores[:, 2:], axis=1, kind="stable")[:, :n_extra]
        for m in range(M):
            refine[m, 2:] = cands[m, 2 + order[m]]

    theta_fin, obj_fin = _pga(refine, u, p, v, q, bounds, rho, ascent)

    obj_incumbent = objective_batch(theta_cur[:, None], u, p, v, q, rho)[:, 0]
    winner = np.argmax(obj_fin, axis=1)
    rows = np.arange(M)
    best_val = obj_fin[rows, winner]
    improved = best_val > obj_incumbent
    theta_new = np.where(improved[:, None], theta_fin[rows, winner], theta_cur)
    obj_returned = np.where(improved, best_val, obj_incumbent)
    return theta_new, obj_incumbent, obj_returned


def maximize_hamiltonian_at_node(node_index: int, u, p, v, q,
                                 theta_current: tuple[np.ndarray, np.ndarray],
                                 bounds: tuple[float, float], rho: float,
                                 rng: np.random.Generator, *,
                                 theta_best: tuple[np.ndarray, np.ndarray] | None = None,
                                 multistart: MultistartConfig | None = None,
                                 ascent: AscentConfig | None = None):
    """Maximize the augmented Hamiltonian at one node; returns (A_new, b_new).

    u, p, v, q have shape (N, d); theta_current is the incumbent (A, b).
    The returned objective is never below the incumbent's.
    """
    multistart = multistart or MultistartConfig()
    ascent = ascent or AscentConfig()
    u = np.atleast_2d(np.asarray(u, float))
    d = u.shape[-1]
    A_cur, b_cur = theta_current
    flat_cur = np.concatenate([np.asarray(A_cur, float).ravel(),
                               np.asarray(b_cur, float).ravel()])
    if theta_best is None:
        flat_best = flat_cur
    else:
        flat_best = np.concatenate([np.asarray(theta_best[0], float).ravel(),
                                    np.asarray(theta_best[1], float).ravel()])
    def stack(a):
        return np.ascontiguousarray(np.atleast_2d(np.asarray(a, float))[None])

    theta_new, _, _ = maximize_nodes_batch(
        stack(u), stack(p), stack(v), stack(q),
        flat_cur[None], flat_best[None], bounds, rho, [rng], multistart, ascent)
    return theta_new[0, :d * d].reshape(d, d).copy(), theta_new[0, d * d:].copy()
