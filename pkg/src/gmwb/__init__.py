"""Semi-Lagrangian epsilon-monotone Fourier solver for GMWB contracts under
jump diffusion and a Vasicek short rate."""

from .engine import (ControlField, Engine, Solution, SolverSettings, constant_rate_setup,
                     control_map, fair_fee, level_grid, load_solution, price_at, solve)
from .grid import Grid, GridConfig, build_grid
from .kernel import KernelWeights, select_weights
from .model import (KOU_REF, MERTON_REF, Contract, Kou, Merton, ModelParams, bond_price,
                    comparable_rate, effective_vol, reference_params)

__all__ = [
    "ControlField", "Engine", "Solution", "SolverSettings", "constant_rate_setup",
    "control_map", "fair_fee", "level_grid", "load_solution", "price_at", "solve",
    "Grid", "GridConfig", "build_grid", "KernelWeights", "select_weights",
    "KOU_REF", "MERTON_REF", "Contract", "Kou", "Merton", "ModelParams", "bond_price",
    "comparable_rate", "effective_vol", "reference_params",
]
