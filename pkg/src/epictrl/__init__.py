"""Optimal lockdown for an SIR epidemic with stochastic transmission rate."""

from .cost import feedback_xi, hamiltonian, running_cost
from .grid import GridSpec, ValueGrid, load_grid, save_grid
from .model import EpidemicState, ModelParams, ParameterError
from .sde import SdeScheme
from .simulate import PolicySource, compute_metrics, export_ensemble, simulate_closed_loop
from .solver import SolverConfig, solve

__all__ = [
    "EpidemicState",
    "GridSpec",
    "ModelParams",
    "ParameterError",
    "PolicySource",
    "SdeScheme",
    "SolverConfig",
    "ValueGrid",
    "compute_metrics",
    "export_ensemble",
    "feedback_xi",
    "hamiltonian",
    "load_grid",
    "running_cost",
    "save_grid",
    "simulate_closed_loop",
    "solve",
]
