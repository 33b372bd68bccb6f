"""Random interlacements on Z^d: exact windowed sampling and cluster analysis.

Subpackages by concern: `lattice` (geometry and boundaries), `walk` (random
walk engine and the lattice Green function), `potential` (equilibrium
measures, capacities, entrance laws), `sampler` (exact windowed sampling of
the occupied/vacant fields), `vacancy` (components, crossings, level scans),
`goodness` (good/bad site classification), `rerouting` (path surgery and the
hypercube lift), `transience` (path energies and effective resistance),
`decoupling` (multi-scale recursion calculator), `snapshots` (binary
container I/O), `cli` (the `interlace` experiment runner).
"""

__version__ = "0.1.0"

from .lattice import BoundaryKind, SiteSet, Window, boundary, hypercube, neighbors
from .potential import EquilibriumMeasure, WindowHarmonics, equilibrium_exact, hit_probability
from .sampler import InterlacementSample, sample, vacancy_probability_check
from .walk import GreenTable, build_green_table, green_value, loop_erase, run_until

__all__ = [
    "BoundaryKind", "SiteSet", "Window", "boundary", "hypercube", "neighbors",
    "EquilibriumMeasure", "WindowHarmonics", "equilibrium_exact", "hit_probability",
    "InterlacementSample", "sample", "vacancy_probability_check",
    "GreenTable", "build_green_table", "green_value", "loop_erase", "run_until",
    "__version__",
]
