"""Boundary-integral tools for the quasi-periodic Helmholtz equation with small holes.

Layers, bottom up:

- :mod:`qphelm.specfun` — entire Bessel/Neumann profiles and the free-space kernel split
- :mod:`qphelm.lattice` — periodicity lattices, dual vectors, resonance bookkeeping
- :mod:`qphelm.qpgreen` — Ewald-split quasi-periodic Green function and its regular part
- :mod:`qphelm.geometry` — boundary curves, discretizations, hole rescaling
- :mod:`qphelm.potentials` — Nystrom assembly of layer operators and field evaluation
- :mod:`qphelm.solvers` — Dirichlet/Neumann boundary-value solvers
- :mod:`qphelm.perturbation` — rescaled operator families on the reference curve
- :mod:`qphelm.nonlinear` — nonlinear Robin continuation in the hole size
- :mod:`qphelm.cli` — deterministic batch command-line driver
"""

__version__ = "0.1.0"

from . import errors  # noqa: F401
