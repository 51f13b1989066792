"""Optimal guidance of mobile sensors estimating a diffusion-advection field."""

from .baselines import PolicyId, baseline_policy
from .evaluation import (StudyResult, TrialStats, compare_policies, convergence_study,
                         heterogeneous_study, parameter_sweep, run_trials)
from .fleet import MobilitySpec, SensorSpec, assemble_fleet, propagate_sensors
from .guidance import GuidanceProblem, GuidanceSolution, SolverSettings, solve_fbs
from .riccati import TimeGrid, propagate_covariance, uncertainty_cost
from .scenario import ScenarioSpec, load_scenario, reference_scenario, save_scenario
from .spectral import FieldSpec, KernelSpec, build_model

__all__ = [
    "FieldSpec", "GuidanceProblem", "GuidanceSolution", "KernelSpec", "MobilitySpec",
    "PolicyId", "ScenarioSpec", "SensorSpec", "SolverSettings", "StudyResult", "TimeGrid",
    "TrialStats", "assemble_fleet", "baseline_policy", "build_model", "compare_policies",
    "convergence_study", "heterogeneous_study", "load_scenario", "parameter_sweep",
    "reference_scenario",
    "propagate_covariance", "propagate_sensors", "run_trials", "save_scenario", "solve_fbs",
    "uncertainty_cost",
]
__version__ = "0.1.0"
