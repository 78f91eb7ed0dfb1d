"""Synchronous and asynchronous primal-dual solvers for peer-to-peer energy trading.

The main entry points are :func:`build_instance` / :func:`load_instance` to
describe a trading problem, :func:`run_syn` for the synchronous iteration,
:class:`SimWorld` with :func:`run_asyn` for the asynchronous simulation and
:func:`solve_reference` for an independent reference solution.
"""

from ._accel import BACKEND, NUMBA_ENABLED
from .analysis import (ConvergenceReport, TsWeights, bound_suite, fejer_slack, rate_fit,
                       ts_norm)
from .asyn import (ActivationModel, DelayModel, SimWorld, TimingModel, asyn_step, run_asyn,
                   sweep_schedule, theta_bound)
from .operators import (EdgeCouplingSet, ProjectionError, ProsumerFeasibleSet, edge_prox,
                        kkt_residual, project_feasible)
from .oracle import OracleSolution, solve_reference
from .problem import (ConstraintProfile, CostProfile, InstanceError, ProblemInstance,
                      RoleSchedule, TradingNetwork, build_instance, cost_gradient, cost_value,
                      smoothness_constants)
from .scenario import load_instance, scenario_path
from .syn import (DivergenceError, SolverState, StepConfig, default_steps, run_syn,
                  syn_step)

__version__ = "0.1.0"
