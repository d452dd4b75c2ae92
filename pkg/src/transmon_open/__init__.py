"""Open-system dynamics of attractive Bose-Hubbard chains of transmons."""

from .model import (
    DephasingModel,
    FockSpace,
    FockState,
    ModelParams,
    SectorBasis,
    SparseOperator,
    build_hamiltonian,
    build_sector_basis,
)

__version__ = "0.1.0"

__all__ = [
    "DephasingModel",
    "FockSpace",
    "FockState",
    "ModelParams",
    "SectorBasis",
    "SparseOperator",
    "build_hamiltonian",
    "build_sector_basis",
]
