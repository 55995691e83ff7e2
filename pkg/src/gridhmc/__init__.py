"""Hamiltonian Monte Carlo with precomputed grid and sparse-grid force approximations."""

from .domain import DomainBox, find_mode, laplace_box, trajectory_box
from .errors import CacheError, GridHMCError, NumericalError, ValidationError
from .grid import ForceGrid, GridForce, build_force_map
from .hmc import ChainResult, HmcConfig, hamiltonian, leapfrog, sample
from .models import BananaModel, GaussianConjugateModel, GpHyperModel, LogisticModel
from .sparse import SparseForce, SparseInterpolant, build_interpolant

__version__ = "0.1.0"

__all__ = [
    "BananaModel",
    "CacheError",
    "ChainResult",
    "DomainBox",
    "ForceGrid",
    "GaussianConjugateModel",
    "GpHyperModel",
    "GridForce",
    "GridHMCError",
    "HmcConfig",
    "LogisticModel",
    "NumericalError",
    "SparseForce",
    "SparseInterpolant",
    "ValidationError",
    "build_force_map",
    "build_interpolant",
    "find_mode",
    "hamiltonian",
    "laplace_box",
    "leapfrog",
    "sample",
    "trajectory_box",
]
