"""Finite-element spaces and assembly on the fixed reference meshes."""
from .assembly import (
    FluidOperator,
    StructureOperator,
    assemble_fluid_operator,
    assemble_mass,
    assemble_pressure_load,
    assemble_structure_operator,
)
from .spaces import DiscreteSpaces, InvalidResolution, Resolution, build_spaces

__all__ = [
    "DiscreteSpaces",
    "InvalidResolution",
    "Resolution",
    "build_spaces",
    "assemble_mass",
    "assemble_fluid_operator",
    "assemble_structure_operator",
    "assemble_pressure_load",
    "FluidOperator",
    "StructureOperator",
]
