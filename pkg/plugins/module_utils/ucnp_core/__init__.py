"""Electron kinetics of ultracold neutral plasmas with orbit-averaged Fokker-Planck methods."""
from .config import ConfigCache, Numerics, PhysicsToggles, Scenario, config_hash, deep_merge, load_config
from .errors import (
    ConfigError,
    ContractViolationError,
    ConvergenceError,
    DivergenceError,
    FitError,
    InferenceError,
    InvalidInputError,
    NonConfiningError,
    StepSizeError,
    UcnpError,
)
from .extraction import ExtractionScan, InferenceResult, infer_temperature, synthetic_scan, truncation_radius
from .fp_solver import (
    EnergyDistribution,
    collision_step,
    evaporation_rate,
    flux,
    kramers_limit_check,
    mean_temperature,
    poisson_recouple,
    stationary_solve,
)
from .ion_cloud import GaussianCloud, evolve_shells, initialize_shells
from .king_equilibrium import KingEquilibrium, solve_selfconsistent, temp_from_counts
from .king_equilibrium import mean_temperature as king_mean_temperature
from .orbit_space import PhaseGeometry, PotentialProfile, build_geometry, eddington_invert, phase_volume
from .plasma_params import Constants, PlasmaSpec, Species, derive_params
from .registry import available_figures, get_figure, register_figure
from .runner import RunRecord, reproduce_figure, run, sweep
from .tbr import BoundState, master_equation_step, mk_kernel, tbr_rate

__all__ = [
    "BoundState",
    "ConfigCache",
    "ConfigError",
    "Constants",
    "ContractViolationError",
    "ConvergenceError",
    "DivergenceError",
    "EnergyDistribution",
    "ExtractionScan",
    "FitError",
    "GaussianCloud",
    "InferenceError",
    "InferenceResult",
    "InvalidInputError",
    "KingEquilibrium",
    "NonConfiningError",
    "Numerics",
    "PhaseGeometry",
    "PhysicsToggles",
    "PlasmaSpec",
    "PotentialProfile",
    "RunRecord",
    "Scenario",
    "Species",
    "StepSizeError",
    "UcnpError",
    "available_figures",
    "build_geometry",
    "collision_step",
    "config_hash",
    "deep_merge",
    "derive_params",
    "eddington_invert",
    "evaporation_rate",
    "evolve_shells",
    "flux",
    "get_figure",
    "infer_temperature",
    "initialize_shells",
    "king_mean_temperature",
    "kramers_limit_check",
    "load_config",
    "master_equation_step",
    "mean_temperature",
    "mk_kernel",
    "phase_volume",
    "poisson_recouple",
    "register_figure",
    "reproduce_figure",
    "run",
    "solve_selfconsistent",
    "stationary_solve",
    "sweep",
    "synthetic_scan",
    "tbr_rate",
    "temp_from_counts",
    "truncation_radius",
]
