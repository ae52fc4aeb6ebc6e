"""Quantum-jump trajectories of 1D monitored free fermions with imbalanced,
inefficient gain/loss detection, on the level of the single-particle
correlation matrix, plus analytic-theory evaluators and fitting tools."""

__version__ = "0.1.0"

from .model import (JumpChannels, LatticeHamiltonian, ModelParams,
                    build_hopping_hamiltonian, build_jump_channels,
                    initial_cdw_state, rates_from_density)
from .state import StateValidityError, hermitize, load_state, reduce, save_state
from .engine import EnsembleStats, RunConfig, ensemble_run, run_trajectory
from .theory import TheoryParams, c_tilde, gaussian_Cq

__all__ = [
    "__version__",
    "JumpChannels", "LatticeHamiltonian", "ModelParams",
    "build_hopping_hamiltonian", "build_jump_channels", "initial_cdw_state",
    "rates_from_density", "StateValidityError", "hermitize", "load_state",
    "reduce", "save_state", "EnsembleStats", "RunConfig", "ensemble_run",
    "run_trajectory", "TheoryParams", "c_tilde", "gaussian_Cq",
]
