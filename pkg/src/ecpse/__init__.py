"""Equivalent-circuit state estimation for power networks.

The package estimates rectangular bus voltages from mixed synchrophasor and
RTU measurements by posing the weighted least-squares problem as a linear(ized)
circuit: measurement residuals become controlled current sources, optimality
conditions become an adjoint circuit, and operating-range information enters
as hard interval bounds handled by a primal-dual interior point method.
"""

from .case_io import (
    Bounded,
    CaseFormatError,
    CaseNetwork,
    MeasurementSet,
    PMUMeasurement,
    RTUMeasurement,
    parse_matpower,
    parse_measurements,
    read_report,
    write_measurements,
    write_report,
    write_state_csv,
)
from .core import EstimatorError, Problem, SingularKKTError, build_problem
from .grid_model import AdmittancePair, build_bus_admittance, injection_current
from .metrics import benchmark, sigma_max, sigma_ss, write_trials_csv
from .powerflow import PowerFlowError, TruthState, solve_powerflow
from .solver import SolverConfig, estimate, run_solver, verify
from .sosc import SOSCResult, check_sosc, rtu_block_eigs
from .synth import (
    NoiseProfile,
    ObservabilityError,
    Placement,
    SynthesisError,
    synthesize_measurements,
)

__all__ = [
    "AdmittancePair",
    "Bounded",
    "CaseFormatError",
    "CaseNetwork",
    "EstimatorError",
    "MeasurementSet",
    "NoiseProfile",
    "ObservabilityError",
    "PMUMeasurement",
    "Placement",
    "PowerFlowError",
    "Problem",
    "RTUMeasurement",
    "SingularKKTError",
    "SolverConfig",
    "SOSCResult",
    "SynthesisError",
    "TruthState",
    "benchmark",
    "build_bus_admittance",
    "build_problem",
    "check_sosc",
    "estimate",
    "injection_current",
    "parse_matpower",
    "parse_measurements",
    "read_report",
    "rtu_block_eigs",
    "run_solver",
    "sigma_max",
    "sigma_ss",
    "solve_powerflow",
    "synthesize_measurements",
    "verify",
    "write_measurements",
    "write_report",
    "write_state_csv",
    "write_trials_csv",
]

__version__ = "0.1.0"
