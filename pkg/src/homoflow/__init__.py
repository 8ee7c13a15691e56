"""Particle gradient flows for the one-dimensional homogeneous Keller-Segel free energy."""

from .core import (EnergyBreakdown, ModelParams, center, deficit_H, energy, energy_breakdown, gradient,
                   hessian, log_moment_slope, second_moment)
from .errors import (ConfigError, DomainError, HomoflowError, NotConvergedError, NumericalOverflowError,
                     SolverError)
from .flow import (BlowUp, Completed, Failure, LogParams, NewtonOptions, RunSpec, SimulationResult,
                   StopOptions, implicit_step, simulate, simulate_log)
from .initial import InitialProfile, tanh_profile
from .thresholds import compute_threshold, critical_profile, estimate_delta_H, threshold_table

__version__ = "0.1.0"
