"""Numerical laboratory for observation-gaslighting games on risk-sensitive filters.

Modules
-------
grid          uniform grids, trapezoid quadrature, densities, L1 metric
model         controlled system, observation channel, seeded simulation
filtering     information-state updates and the two cost representations
robustness    constants and deviation bounds between gaslit and nominal filters
stealth       stage-wise stealthiness certificates and design cost
dp            alpha-vector dynamic programming for the DM
stackelberg   gaslighter objective, value recursion, equilibrium search
config        declarative scenarios and the function catalog
cli           experiment commands
"""

from .errors import BudgetExceededError, ConfigError, DegenerateDensityError, GaslightError, GridError
from .grid import Grid, GridDensity, GridFunction, InformationState, density_stats, l1_distance, normalize, quadrature
from .model import GaslightEffort, SamplingMode, SystemModel, Trajectory, simulate, simulate_batch
from .filtering import cost_direct, cost_info_state, gaslit_update, info_state_update, run_filter, terminal_functional
from .robustness import RobustnessConstants, compute_constants
from .stealth import certify_effort, design_cost, ess_definition_check, ess_sufficient_integral
from .dp import AlphaPolicy, AlphaVectorSet, backward_induction, enumerate_policies_oracle, response_set, value
from .stackelberg import EffortMenu, gaslighter_objective, search_equilibrium, theorem5_bounds
from .config import ScenarioConfig, build_model, builtin_scenario, load_config
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = [
    "BudgetExceededError", "ConfigError", "DegenerateDensityError", "GaslightError", "GridError",
    "Grid", "GridDensity", "GridFunction", "InformationState", "density_stats", "l1_distance", "normalize",
    "quadrature", "GaslightEffort", "SamplingMode", "SystemModel", "Trajectory", "simulate", "simulate_batch",
    "cost_direct", "cost_info_state", "gaslit_update", "info_state_update", "run_filter", "terminal_functional",
    "RobustnessConstants", "compute_constants", "certify_effort", "design_cost", "ess_definition_check",
    "ess_sufficient_integral", "AlphaPolicy", "AlphaVectorSet", "backward_induction", "enumerate_policies_oracle",
    "response_set", "value", "EffortMenu", "gaslighter_objective", "search_equilibrium", "theorem5_bounds",
    "ScenarioConfig", "build_model", "builtin_scenario", "load_config", "BACKEND",
]
