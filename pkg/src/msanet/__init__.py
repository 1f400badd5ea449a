"""Continuous-depth network training via Pontryagin successive approximations."""

from .mesh import (BatchTrajectory, ControlTrajectory, TimeMesh,
                   make_uniform_mesh, prolong_control, quadrature_l2_sq)
from .model import (ProblemSpec, augmented_hamiltonian, dynamics_f,
                    empirical_cost, grad_theta_hamiltonian, grad_u_hamiltonian,
                    hamiltonian, lift_input, output_g, prediction_filter,
                    terminal_loss_and_grad)
from .integrators import (IntegratorKind, NumericalOverflowError, gronwall_bound,
                          refine_to_accuracy, residual_accuracy, solve_bwd,
                          solve_bwd_controlled, solve_fwd, solve_fwd_controlled)
from .maximize import (AscentConfig, MultistartConfig, maximize_hamiltonian_at_node)
from .training import (AbruptRefinement, AccuracyDriven, FixedDepth,
                       IterationRow, PeriodicRefinement, RunRecord, TrainConfig,
                       TrainingState, amsa_iterate, compute_lambda_sq,
                       epsilon_schedule_theoretical, gamma_bound_theoretical,
                       init_training_state, predict, run_training,
                       strategy_from_name)
from .tasks import (AggregateStats, Dataset, Task, TASKS, aggregate_runs,
                    evaluate_test_loss, gen_classif, gen_sine, gen_step,
                    mismatch_rate, predict_grid)

__version__ = "0.1.0"
