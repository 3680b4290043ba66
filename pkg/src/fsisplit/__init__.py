"""Splitting-scheme simulator for a power-law fluid coupled to a thin and a thick structure."""
from .constitutive import FluidLaw, ThickLaw, ThinLaw
from .discretization import Resolution, build_spaces
from .geometry import ReferenceGeometry, degeneracy_monitor, harmonic_extension
from .kernels import BACKEND
from .scheme import CoupledState, Laws, ProblemSetup, SchemeConfig, run

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CoupledState",
    "FluidLaw",
    "Laws",
    "ProblemSetup",
    "ReferenceGeometry",
    "Resolution",
    "SchemeConfig",
    "ThickLaw",
    "ThinLaw",
    "build_spaces",
    "degeneracy_monitor",
    "harmonic_extension",
    "run",
]
