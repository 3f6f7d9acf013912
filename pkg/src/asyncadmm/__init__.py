"""Asynchronous consensus optimization over simulated networks.

Nodes of a connected graph cooperate to minimize a partially separable
objective: each node owns a smooth, possibly non-convex block that couples
its own variable with its neighbors', plus a penalty and a constraint set on
its own variable.  The solver alternates weighted consensus steps, local
gradient or surrogate steps on per-node copies, and dual ascent, and remains
convergent when nodes sleep through rounds and work from stale gradients,
provided the penalty parameters clear the documented margins.
"""

from .core import AdmmEngine, RoundInput, RoundStats
from .diagnostics import (ParamCheck, StationarityResiduals, TraceRecord, alpha_beta,
                          augmented_lagrangian, check_parameters,
                          finite_difference_gradient, lagrangian_lower_bound,
                          min_feasible_rho, nrmse, stationarity_residuals, write_trace)
from .errors import (AsyncAdmmError, ConfigurationError, ScheduleViolationError,
                     SurrogateSolveError)
from .estimators import ConsensusADMM, CooperativeLocalizer
from .network import (ANCHOR_POSITIONS, BernoulliSchedule, CyclicSchedule,
                      SynchronousSchedule, Topology, generate_geometric_graph,
                      make_schedule, ring_topology)
from .problems import (Box, LocalizationProblem, NormToPoint, Point, Problem,
                       QuadraticProblem, RealSpace, ZeroPenalty, load_instance,
                       random_quadratic, save_instance, smoothed_distance)
from .reference import synchronous_reference_run
from .runner import (PRESETS, ReplicateResult, RunConfig, build_config, build_problem,
                     run_experiment, run_single, run_sweep)

__version__ = "0.1.0"

__all__ = [
    "ANCHOR_POSITIONS", "AdmmEngine", "AsyncAdmmError", "BernoulliSchedule",
    "Box", "ConfigurationError", "ConsensusADMM", "CooperativeLocalizer",
    "CyclicSchedule", "LocalizationProblem", "NormToPoint", "ParamCheck",
    "Point", "PRESETS", "Problem", "QuadraticProblem", "RealSpace",
    "ReplicateResult", "RoundInput", "RoundStats", "RunConfig",
    "ScheduleViolationError", "StationarityResiduals", "SurrogateSolveError",
    "SynchronousSchedule", "Topology", "TraceRecord", "ZeroPenalty",
    "alpha_beta", "augmented_lagrangian", "build_config", "build_problem",
    "check_parameters", "finite_difference_gradient",
    "generate_geometric_graph", "lagrangian_lower_bound", "load_instance",
    "make_schedule", "min_feasible_rho", "nrmse", "random_quadratic",
    "ring_topology", "run_experiment", "run_single", "run_sweep",
    "save_instance", "smoothed_distance", "stationarity_residuals",
    "synchronous_reference_run", "write_trace",
]
