"""Implicit time stepping and Monte Carlo checks for the stochastic p-Laplace equation
on a periodic box."""

from .driver import InitSpec, NoiseSpec, SimConfig, Trajectory, solve_additive
from .grid import Grid
from .mc import EnsembleStats, inequality_report, run_ensemble
from .multiplicative import PicardConfig, picard_solve
from .plap import PLaplaceParams, energy, flux, p_laplacian
from .step import NonConvergence, StepProblem, solve_step
from .viscosity import solve_viscous, viscosity_sweep

__all__ = [
    "Grid",
    "PLaplaceParams",
    "flux",
    "p_laplacian",
    "energy",
    "StepProblem",
    "solve_step",
    "NonConvergence",
    "NoiseSpec",
    "InitSpec",
    "SimConfig",
    "Trajectory",
    "solve_additive",
    "PicardConfig",
    "picard_solve",
    "solve_viscous",
    "viscosity_sweep",
    "EnsembleStats",
    "run_ensemble",
    "inequality_report",
]
