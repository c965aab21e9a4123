"""Flow-level bandwidth sharing under weighted proportional fairness:
allocation, phase-type file sizes, inner-product geometry, the flow-count
Markov chain and heavy-traffic sweep tooling."""

from .allocation import Allocation, FlowState, KKTReport, solve_allocation, verify_kkt
from .ctmc import (ExactStationary, SimulationEstimate, TransitionSet, drift_eval,
                   exact_stationary, make_rng, simulate, transition_kernel, uniformize_check)
from .errors import (ConfigError, DistributionError, FairshareError, NetworkError,
                     QuadratureError, SimulationError, SolverError, StateSpaceError)
from .geometry import (GeometryContext, build_geometry, nnls, project_cone, project_subspace,
                       verify_drift_properties)
from .harness import (BoundVerdict, ModelConfig, SweepReport, check_bounds, emit_report,
                      identity_suite, load_config, parse_config, read_sweep_csv, run_sweep)
from .inner_product import InnerProductMatrix, build_M, pbh_test, verify_M
from .network import (Link, NetworkSpec, Route, TrafficProfile, ValidationReport,
                      derive_traffic_profile, routing_matrix, validate_network)
from .phasetype import (PhaseTypeDist, build_class_d, erlang, exponential, hyperexponential,
                        moments_and_loads, survival_and_hazard)

__all__ = [
    "Allocation", "FlowState", "KKTReport", "solve_allocation", "verify_kkt",
    "ExactStationary", "SimulationEstimate", "TransitionSet", "drift_eval",
    "exact_stationary", "make_rng", "simulate", "transition_kernel", "uniformize_check",
    "ConfigError", "DistributionError", "FairshareError", "NetworkError",
    "QuadratureError", "SimulationError", "SolverError", "StateSpaceError",
    "GeometryContext", "build_geometry", "nnls", "project_cone", "project_subspace",
    "verify_drift_properties", "BoundVerdict", "ModelConfig", "SweepReport",
    "check_bounds", "emit_report", "identity_suite", "load_config", "parse_config",
    "read_sweep_csv", "run_sweep", "InnerProductMatrix", "build_M", "pbh_test", "verify_M",
    "Link", "NetworkSpec", "Route", "TrafficProfile", "ValidationReport",
    "derive_traffic_profile", "routing_matrix", "validate_network", "PhaseTypeDist",
    "build_class_d", "erlang", "exponential", "hyperexponential", "moments_and_loads",
    "survival_and_hazard",
]

__version__ = "0.1.0"
