"""Training engine: successive-approximation iteration with mesh refinement.

Each iteration propagates every sample forward, propagates the co-states
backward from the terminal-loss gradient, maximizes the augmented Hamiltonian
node by node, and re-evaluates the cost.  Refinement strategies grow the mesh
(the network depth) across iterations; controls are carried over by
midpoint prolongation.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from . import integrators as integ
from . import model
from .maximize import AscentConfig, MultistartConfig, maximize_nodes_batch
from .mesh import (BatchTrajectory, ControlTrajectory, TimeMesh,
                   make_uniform_mesh, prolong_control, quadrature_l2_sq,
                   quadrature_midpoint)

# ---------------------------------------------------------------------------
# refinement strategies


@dataclass(frozen=True)
class FixedDepth:
    """Constant layer count; layers=3 is the shallow and 32 the deep baseline."""

    layers: int = 3

    @property
    def initial_layers(self) -> int:
        return self.layers

    @property
    def final_layers(self) -> int:
        return self.layers

    def layers_at(self, iteration: int) -> int:
        return self.layers


@dataclass(frozen=True)
class AbruptRefinement:
    """Jump from shallow to deep at one switch iteration."""

    start_layers: int = 3
    end_layers: int = 32
    switch_iteration: int = 250

    @property
    def initial_layers(self) -> int:
        return self.start_layers

    @property
    def final_layers(self) -> int:
        return self.end_layers

    def layers_at(self, iteration: int) -> int:
        return self.end_layers if iteration >= self.switch_iteration else self.start_layers


@dataclass(frozen=True)
class PeriodicRefinement:
    """Add a block of layers every `period` iterations up to a cap."""

    start_layers: int = 3
    end_layers: int = 32
    add_layers: int = 10
    period: int = 50

    @property
    def initial_layers(self) -> int:
        return self.start_layers

    @property
    def final_layers(self) -> int:
        return self.end_layers

    def layers_at(self, iteration: int) -> int:
        grown = self.start_layers + self.add_layers * (iteration // self.period)
        return min(grown, self.end_layers)


@dataclass(frozen=True)
class AccuracyDriven:
    """Refine whenever the residual exceeds what the epsilon schedule allows.

    delta and big_c are the free constants of the theoretical schedule; the
    mesh is doubled until the Gronwall-converted residual accuracy meets the
    current epsilon, subject to the layer cap.
    """

    delta: float = 1.0
    big_c: float = 1.0
    start_layers: int = 3
    max_layers: int = 32

    @property
    def initial_layers(self) -> int:
        return self.start_layers

    @property
    def final_layers(self) -> int:
        return self.start_layers  # growth is data-driven; no fixed target

    def layers_at(self, iteration: int) -> int:
        return self.start_layers


RefinementStrategy = Union[FixedDepth, AbruptRefinement, PeriodicRefinement, AccuracyDriven]

STRATEGY_NAMES = ("shallow", "deep", "a1", "a2", "a3", "theoretical")


def strategy_from_name(name: str, delta: float = 1.0, big_c: float = 1.0) -> RefinementStrategy:
    """Build the named refinement strategy with its standard parameters."""
    if name == "shallow":
        return FixedDepth(3)
    if name == "deep":
        return FixedDepth(32)
    if name == "a1":
        return AbruptRefinement()
    if name == "a2":
        return PeriodicRefinement(period=50)
    if name == "a3":
        return PeriodicRefinement(period=100)
    if name == "theoretical":
        return AccuracyDriven(delta=delta, big_c=big_c)
    raise ValueError(f"unknown strategy {name!r}; expected one of {STRATEGY_NAMES}")


# ---------------------------------------------------------------------------
# configuration and run records


@dataclass(frozen=True)
class TrainConfig:
    rho: float = 5.0
    tau: float = 1e-8
    k_max: int = 800
    strategy: RefinementStrategy = field(default_factory=lambda: FixedDepth(3))
    integrator: integ.IntegratorKind = integ.IntegratorKind.EXPLICIT_EULER
    multistart: MultistartConfig = field(default_factory=MultistartConfig)
    ascent: AscentConfig = field(default_factory=AscentConfig)
    seed: int = 0
    runs: int = 20
    patience: int = 100
    init: str = "zeros"

    def __post_init__(self):
        if not self.rho > 0.0:
            raise ValueError("rho must be positive")
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if self.k_max < 0:
            raise ValueError("k_max must be nonnegative")
        if self.patience < 1:
            raise ValueError("patience must be at least one iteration")
        if self.init not in ("zeros", "uniform"):
            raise ValueError("init must be 'zeros' or 'uniform'")


@dataclass(frozen=True)
class IterationRow:
    iteration: int
    layers: int
    train_loss: float
    test_loss: float
    lambda_sq: float
    wall_ms: float


@dataclass
class RunRecord:
    """Per-iteration metrics and final/best controls for one training run."""

    rows: list[IterationRow] = field(default_factory=list)
    final_control: Optional[ControlTrajectory] = None
    final_mesh: Optional[TimeMesh] = None
    best_control: Optional[ControlTrajectory] = None
    best_mesh: Optional[TimeMesh] = None
    converged: bool = False
    aborted: bool = False
    abort_reason: str = ""
    dominance_margins: list[float] = field(default_factory=list)

    @property
    def min_train_loss(self) -> float:
        return min(r.train_loss for r in self.rows)

    @property
    def argmin_iteration(self) -> int:
        best = min(self.rows, key=lambda r: (r.train_loss, r.iteration))
        return best.iteration

    @property
    def test_loss_at_best(self) -> float:
        k = self.argmin_iteration
        return next(r.test_loss for r in self.rows if r.iteration == k)

    @property
    def final_layers(self) -> int:
        return self.rows[-1].layers


# ---------------------------------------------------------------------------
# diagnostics and theoretical schedules


def compute_lambda_sq(states: BatchTrajectory, costates: BatchTrajectory,
                      old: ControlTrajectory, new: ControlTrajectory) -> float:
    """Sample-averaged integral of squared update-induced changes.

    Integrates |f(u, new) - f(u, old)|^2 + |grad_u H(u, p, new) -
    grad_u H(u, p, old)|^2 along the trajectories by node-wise evaluation and
    trapezoidal quadrature, then averages over samples.
    """
    mesh = old.mesh
    if new.mesh != mesh or states.mesh != mesh or costates.mesh != mesh:
        raise ValueError("states, costates and both controls must share one mesh")
    L = mesh.num_intervals
    seg = np.minimum(np.arange(L + 1), L - 1)
    u = np.moveaxis(states.values, 0, 1)    # (L+1, N, d)
    p = np.moveaxis(costates.values, 0, 1)

    def eval_both(ctrl):
        A = ctrl.weights[seg][:, None]      # (L+1, 1, d, d)
        b = ctrl.biases[seg][:, None]
        return model.dynamics_f(u, A, b), model.grad_u_hamiltonian(u, p, A, b)

    f_old, g_old = eval_both(old)
    f_new, g_new = eval_both(new)
    per_node = (np.sum((f_new - f_old) ** 2, axis=-1)
                + np.sum((g_new - g_old) ** 2, axis=-1)).mean(axis=1)
    return quadrature_l2_sq(per_node, mesh)


def epsilon_schedule_theoretical(lambda_k: float, eps_prev: float, delta: float,
                                 big_c: float, rho: float, num_samples: int) -> float:
    """Next propagation accuracy: min(eps_prev, delta l^2 / (4C + rho l / sqrt(N)))."""
    if delta <= 0.0 or big_c <= 0.0 or rho <= 0.0 or num_samples <= 0:
        raise ValueError("delta, big_c, rho and num_samples must be positive")
    if lambda_k < 0.0 or eps_prev < 0.0:
        raise ValueError("lambda_k and eps_prev must be nonnegative")
    bound = delta * lambda_k * lambda_k / (4.0 * big_c + rho * lambda_k / math.sqrt(num_samples))
    return min(eps_prev, bound)


def gamma_bound_theoretical(mean_abs_aug_h: float, delta: float, lambda_sq: float) -> float:
    """Required maximization quality |mean H~| / (delta l^2 + |mean H~|), in (0, 1]."""
    if mean_abs_aug_h < 0.0 or delta < 0.0 or lambda_sq < 0.0:
        raise ValueError("inputs must be nonnegative")
    denom = delta * lambda_sq + mean_abs_aug_h
    if denom == 0.0:
        raise ValueError("gamma bound undefined when both terms vanish")
    return mean_abs_aug_h / denom


# ---------------------------------------------------------------------------
# training state and iteration


@dataclass
class TrainingState:
    """Everything one iteration needs; mutated in place by `amsa_iterate`."""

    spec: model.ProblemSpec
    xs: np.ndarray
    ys: np.ndarray
    control: ControlTrajectory
    states: np.ndarray           # time-major (L+1, N, d)
    cost: float
    iteration: int
    best_control: ControlTrajectory
    best_cost: float
    best_iteration: int
    seed: int
    run_key: int
    lambda_prev: Optional[float] = None
    eps: Optional[float] = None
    delta_cost: float = math.inf
    last_improvement: int = 0
    schedule_complete_since: Optional[int] = None
    test_sampler: Optional[Callable] = None
    test_samples: int = 0
    record: RunRecord = field(default_factory=RunRecord)

    @property
    def mesh(self) -> TimeMesh:
        return self.control.mesh


def _node_rng(state: TrainingState, iteration: int, node: int) -> np.random.Generator:
    seq = np.random.SeedSequence(state.seed, spawn_key=(state.run_key, 1, iteration, node))
    return np.random.Generator(np.random.PCG64(seq))


def _test_rng(state: TrainingState, iteration: int) -> np.random.Generator:
    seq = np.random.SeedSequence(state.seed, spawn_key=(state.run_key, 2, iteration))
    return np.random.Generator(np.random.PCG64(seq))


def _forward(state: TrainingState, control: ControlTrajectory, kind) -> np.ndarray:
    u0 = model.lift_input(state.xs, state.spec.width)
    return integ.solve_fwd_controlled(control, u0, kind)


def _cost_of(states: np.ndarray, ys: np.ndarray) -> float:
    loss, _ = model.terminal_loss_and_grad(states[-1], ys)
    return float(loss.mean())


def _test_loss(state: TrainingState, iteration: int, kind) -> float:
    if state.test_sampler is None:
        return math.nan
    rng = _test_rng(state, iteration)
    xs, ys = state.test_sampler(rng, state.test_samples)
    u0 = model.lift_input(xs, state.spec.width)
    traj = integ.solve_fwd_controlled(state.control, u0, kind)
    loss, _ = model.terminal_loss_and_grad(traj[-1], ys)
    return float(loss.mean())


def _batch_residual(control: ControlTrajectory, states: np.ndarray) -> float:
    """Midpoint defect of the Euler reconstruction over the whole batch."""
    mesh = control.mesh
    sq = np.empty(mesh.num_intervals)
    for l in range(mesh.num_intervals):
        A, b = control.weights[l], control.biases[l]
        k1 = model.dynamics_f(states[l], A, b)
        f_mid = model.dynamics_f(0.5 * (states[l] + states[l + 1]), A, b)
        sq[l] = np.sum((f_mid - k1) ** 2)
    return math.sqrt(quadrature_midpoint(sq, mesh))


def _lipschitz_of(control: ControlTrajectory) -> float:
    if control.mesh.num_intervals == 0:
        return 0.0
    return float(max(np.linalg.norm(A, 2) for A in control.weights))


def _refine_mesh_for_iteration(state: TrainingState, config: TrainConfig) -> None:
    """Grow the mesh per strategy; prolong controls and recompute states."""
    strategy = config.strategy
    k = state.iteration + 1
    if isinstance(strategy, AccuracyDriven):
        # the schedule starts from the first positive update size; a zero
        # lambda means the control did not move, so there is nothing to tighten
        if not state.lambda_prev:
            return
        state.eps = epsilon_schedule_theoretical(
            math.sqrt(state.lambda_prev),
            state.eps if state.eps is not None else math.inf,
            strategy.delta, strategy.big_c, config.rho, state.xs.shape[0])
        if state.eps <= 0.0:
            return
        k_lip = _lipschitz_of(state.control)
        factor = integ.gronwall_bound(1.0, k_lip, state.spec.horizon)
        target_eta = state.eps / factor
        while (_batch_residual(state.control, state.states) > target_eta
               and 2 * state.mesh.num_intervals <= strategy.max_layers):
            fine = state.mesh.doubled()
            state.control = prolong_control(state.control, fine)
            state.best_control = prolong_control(state.best_control, fine)
            state.states = _forward(state, state.control, config.integrator)
        return
    target = strategy.layers_at(k)
    if target != state.mesh.num_intervals:
        fine = make_uniform_mesh(state.spec.horizon, target)
        state.control = prolong_control(state.control, fine)
        state.best_control = prolong_control(state.best_control, fine)
        state.states = _forward(state, state.control, config.integrator)


def amsa_iterate(state: TrainingState, config: TrainConfig) -> IterationRow:
    """One training iteration: refine, propagate, maximize, re-evaluate."""
    t0 = time.perf_counter()
    k = state.iteration + 1
    spec = state.spec
    kind = config.integrator

    _refine_mesh_for_iteration(state, config)
    mesh = state.mesh
    L = mesh.num_intervals
    states = state.states

    loss, grad_phi = model.terminal_loss_and_grad(states[-1], state.ys)
    costates = integ.solve_bwd_controlled(state.control, states, -grad_phi, kind)

    h = mesh.widths[:, None, None]
    v = np.ascontiguousarray((states[1:] - states[:-1]) / h)
    q = np.ascontiguousarray((costates[1:] - costates[:-1]) / h)
    u_nodes = np.ascontiguousarray(states[:-1])
    p_nodes = np.ascontiguousarray(costates[:-1])

    d = spec.width
    flat_cur = np.concatenate(
        [state.control.weights.reshape(L, d * d), state.control.biases], axis=1)
    flat_best = np.concatenate(
        [state.best_control.weights.reshape(L, d * d), state.best_control.biases], axis=1)
    rngs = [_node_rng(state, k, m) for m in range(L)]
    theta_new, obj_inc, obj_ret = maximize_nodes_batch(
        u_nodes, p_nodes, v, q, flat_cur, flat_best, spec.bounds, config.rho,
        rngs, config.multistart, config.ascent)
    state.record.dominance_margins.append(float((obj_ret - obj_inc).min()))

    new_control = state.control.replace(
        theta_new[:, :d * d].reshape(L, d, d), theta_new[:, d * d:])
    lam_sq = compute_lambda_sq(
        BatchTrajectory.from_time_major(mesh, states),
        BatchTrajectory.from_time_major(mesh, costates),
        state.control, new_control)

    state.control = new_control
    state.states = _forward(state, new_control, kind)
    new_cost = _cost_of(state.states, state.ys)
    state.delta_cost = state.cost - new_cost
    state.cost = new_cost
    state.iteration = k
    state.lambda_prev = lam_sq
    if new_cost < state.best_cost:
        if state.best_cost - new_cost > config.tau:
            state.last_improvement = k
        state.best_cost = new_cost
        state.best_control = new_control
        state.best_iteration = k

    row = IterationRow(
        iteration=k, layers=L, train_loss=new_cost,
        test_loss=_test_loss(state, k, kind), lambda_sq=lam_sq,
        wall_ms=(time.perf_counter() - t0) * 1e3)
    state.record.rows.append(row)
    return row


def _schedule_complete(state: TrainingState, config: TrainConfig) -> bool:
    s = config.strategy
    if isinstance(s, (FixedDepth, AccuracyDriven)):
        return True
    return state.mesh.num_intervals >= s.final_layers


def init_training_state(samples, spec: model.ProblemSpec, config: TrainConfig,
                        run_key: int = 0, test_sampler=None,
                        test_samples: int | None = None) -> TrainingState:
    xs, ys = samples
    xs = np.atleast_2d(np.asarray(xs, float))
    ys = np.atleast_1d(np.asarray(ys, float))
    if xs.shape[0] == 0:
        raise ValueError("empty sample set")
    mesh = make_uniform_mesh(spec.horizon, config.strategy.initial_layers)
    if config.init == "uniform":
        # seeded draw from the run's stream; deterministic and feasible, and
        # it steers clear of the constant-predictor basin of the zero control
        rng = np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(config.seed, spawn_key=(run_key, 0))))
        lo, hi = spec.bounds
        L, d = mesh.num_intervals, spec.width
        control = ControlTrajectory(mesh, rng.uniform(lo, hi, (L, d, d)),
                                    rng.uniform(lo, hi, (L, d)), spec.bounds)
    else:
        control = ControlTrajectory.zeros(mesh, spec.width, spec.bounds)
    state = TrainingState(
        spec=spec, xs=xs, ys=ys, control=control, states=np.empty(0),
        cost=math.inf, iteration=0, best_control=control, best_cost=math.inf,
        best_iteration=0, seed=config.seed, run_key=run_key,
        test_sampler=test_sampler,
        test_samples=test_samples if test_samples is not None else xs.shape[0])
    state.states = _forward(state, control, config.integrator)
    state.cost = _cost_of(state.states, ys)
    state.best_cost = state.cost
    return state


def run_training(samples, spec: model.ProblemSpec, config: TrainConfig,
                 run_key: int = 0, test_sampler=None,
                 test_samples: int | None = None) -> RunRecord:
    """Full training run: iterate until the tolerance and schedule allow a stop.

    The loop continues while the cost decrement exceeds tau or the refinement
    schedule has not reached its final depth, up to k_max iterations.  Seeds
    are derived from (config.seed, run_key), so records are reproducible.
    """
    t0 = time.perf_counter()
    state = init_training_state(samples, spec, config, run_key, test_sampler,
                                test_samples)
    record = state.record
    record.rows.append(IterationRow(
        iteration=0, layers=state.mesh.num_intervals, train_loss=state.cost,
        test_loss=_test_loss(state, 0, config.integrator), lambda_sq=0.0,
        wall_ms=(time.perf_counter() - t0) * 1e3))
    while state.iteration < config.k_max:
        try:
            amsa_iterate(state, config)
        except integ.NumericalOverflowError as err:
            record.rows.append(IterationRow(
                iteration=state.iteration + 1, layers=state.mesh.num_intervals,
                train_loss=math.inf, test_loss=math.inf, lambda_sq=0.0,
                wall_ms=0.0))
            record.aborted = True
            record.abort_reason = str(err)
            break
        if _schedule_complete(state, config):
            if state.schedule_complete_since is None:
                state.schedule_complete_since = state.iteration
            # the stochastic multistart earns a patience window: stop only
            # once the best cost has stalled (no improvement beyond tau) for
            # `patience` iterations after the schedule reached full depth
            stalled_since = max(state.last_improvement, state.schedule_complete_since)
            if state.iteration - stalled_since >= config.patience:
                record.converged = True
                break
    record.final_control = state.control
    record.final_mesh = state.mesh
    record.best_control = state.best_control
    record.best_mesh = state.best_control.mesh
    return record


def predict(x, control: ControlTrajectory, spec: model.ProblemSpec,
            output_kind: str | None = None,
            integrator: integ.IntegratorKind = integ.IntegratorKind.EXPLICIT_EULER):
    """Network prediction: propagate the lifted input and apply the output map."""
    u0 = model.lift_input(x, spec.width)
    traj = integ.solve_fwd_controlled(control, u0, integrator)
    return model.output_g(traj[-1], output_kind or spec.output_kind)
