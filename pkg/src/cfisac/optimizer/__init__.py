"""Joint power and blocklength allocation."""

from .algorithm1 import (AlgorithmOptions, AllocationResult, AvailabilityReport, DropRecord,
                         TraceEntry, Verification, initial_state, network_availability,
                         run_algorithm1, state_from_power, verify_allocation)
from .barrier import InfeasibleProblem, NewtonLimitExceeded
from .power import PowerSolution, min_power_allocation, sinr_targets
from .subproblem import (ConvexSubproblem, IterateState, SubproblemError, SubproblemSolution,
                         Tolerances, build_subproblem, solve_subproblem)

__all__ = [
    "AlgorithmOptions", "AllocationResult", "AvailabilityReport", "ConvexSubproblem", "DropRecord",
    "InfeasibleProblem", "IterateState", "NewtonLimitExceeded", "PowerSolution", "SubproblemError",
    "SubproblemSolution", "Tolerances", "TraceEntry", "Verification", "build_subproblem",
    "initial_state", "min_power_allocation", "network_availability", "run_algorithm1",
    "sinr_targets", "solve_subproblem", "state_from_power", "verify_allocation",
]
