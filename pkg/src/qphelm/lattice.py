"""Rectangular periodicity lattices, dual vectors, and resonance bookkeeping.

The period cell is the box prod_j [0, q_j) with diagonal period matrix
diag(q_1..q_n); quasi-momentum eta shifts the dual lattice, so the plane-wave
frequencies are beta_z = 2 pi z / q + eta for integer z.  A wavenumber k is
resonant when k**2 equals some |beta_z|**2: evaluation of the periodic Green
function is refused there.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ResonanceError

__all__ = [
    "Lattice",
    "WaveContext",
    "dual_vector",
    "resonance_set",
    "spectrum_distance",
    "make_wave_context",
    "DEFAULT_RESONANCE_TOLERANCE",
]

DEFAULT_RESONANCE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Lattice:
    """Diagonal-period lattice with quasi-momentum.

    Attributes
    ----------
    q_diag : tuple of positive floats, the cell edge lengths
    eta : tuple of floats, the quasi-momentum (same length)
    """

    q_diag: tuple[float, ...]
    eta: tuple[float, ...]

    def __post_init__(self):
        q = tuple(float(v) for v in self.q_diag)
        e = tuple(float(v) for v in self.eta)
        if len(q) != len(e):
            raise ValueError("q_diag and eta must have the same length")
        if len(q) not in (2, 3):
            raise ValueError("only dimensions 2 and 3 are supported")
        if any(v <= 0.0 for v in q):
            raise ValueError("cell edges must be positive")
        object.__setattr__(self, "q_diag", q)
        object.__setattr__(self, "eta", e)

    @property
    def dim(self) -> int:
        return len(self.q_diag)

    @property
    def cell_measure(self) -> float:
        return float(np.prod(self.q_diag))

    @property
    def q(self) -> np.ndarray:
        return np.asarray(self.q_diag, dtype=float)

    @property
    def eta_vec(self) -> np.ndarray:
        return np.asarray(self.eta, dtype=float)


def dual_vector(lattice: Lattice, z) -> np.ndarray:
    """beta_z = 2 pi z / q + eta for integer multi-indices z (vectorized over rows)."""
    z = np.asarray(z, dtype=float)
    return 2.0 * np.pi * z / lattice.q + lattice.eta_vec


def _index_box(lattice: Lattice, k: complex, search_radius: int | None) -> int:
    """Half-width of the integer search box that surely contains all near-resonant z."""
    if search_radius is not None:
        return int(search_radius)
    kmag = abs(k)
    emag = float(np.max(np.abs(lattice.eta_vec))) if lattice.dim else 0.0
    qmax = float(np.max(lattice.q))
    return int(math.ceil((kmag + emag) * qmax / (2.0 * np.pi))) + 2


def resonance_set(lattice: Lattice, k: complex, search_radius: int | None = None,
                  tolerance: float = DEFAULT_RESONANCE_TOLERANCE) -> list[tuple[int, ...]]:
    """Integer indices z with k**2 = |beta_z|**2 up to tolerance (scaled by max(1, |k|^2))."""
    half = _index_box(lattice, k, search_radius)
    tol = tolerance * max(1.0, abs(k) ** 2)
    k2 = complex(k) ** 2
    hits = []
    for z in itertools.product(range(-half, half + 1), repeat=lattice.dim):
        beta = dual_vector(lattice, z)
        if abs(k2 - float(beta @ beta)) <= tol:
            hits.append(tuple(z))
    return hits


def spectrum_distance(lattice: Lattice, k: complex, search_radius: int | None = None) -> float:
    """min_z |k**2 - |beta_z|**2|, the margin from the lattice spectrum."""
    half = _index_box(lattice, k, search_radius)
    k2 = complex(k) ** 2
    best = math.inf
    for z in itertools.product(range(-half, half + 1), repeat=lattice.dim):
        beta = dual_vector(lattice, z)
        best = min(best, abs(k2 - float(beta @ beta)))
    return best


@dataclass(frozen=True)
class WaveContext:
    """Wavenumber plus its resonance diagnostics for a fixed lattice."""

    k: complex
    resonance_set: tuple[tuple[int, ...], ...] = field(default=())
    spectral_distance: float = math.inf

    @property
    def is_resonant(self) -> bool:
        return len(self.resonance_set) > 0


def make_wave_context(lattice: Lattice, k: complex,
                      resonance_tolerance: float = DEFAULT_RESONANCE_TOLERANCE,
                      require_nonresonant: bool = False) -> WaveContext:
    """Build a WaveContext; optionally refuse resonant wavenumbers outright."""
    k = complex(k)
    hits = resonance_set(lattice, k, tolerance=resonance_tolerance)
    dist = spectrum_distance(lattice, k)
    ctx = WaveContext(k=k, resonance_set=tuple(hits), spectral_distance=dist)
    if require_nonresonant and ctx.is_resonant:
        raise ResonanceError(
            f"k={k} is resonant for q={lattice.q_diag}, eta={lattice.eta}: "
            f"indices {hits}, spectral distance {dist:.3e}"
        )
    return ctx
