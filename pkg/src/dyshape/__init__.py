"""Shape analysis, fusion, and memory planning for dynamic tensor graphs."""

__version__ = "0.1.0"

from . import analysis, fusion, interp, ir, lattice, ops, patching, planner, symexpr

__all__ = [
    "analysis",
    "fusion",
    "interp",
    "ir",
    "lattice",
    "ops",
    "patching",
    "planner",
    "symexpr",
]
