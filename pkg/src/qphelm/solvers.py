"""Dirichlet and Neumann solvers for the exterior quasi-periodic problem.

The domain is the period cell minus a hole; fields are quasi-periodic across
the cell and satisfy the Helmholtz equation.  Dirichlet data is matched by a
combined representation u = D[mu] + i*A*S[mu] (A a caller-supplied 0/1 flag
turning on the single-layer coupling used near interior Neumann eigenvalues),
Neumann data by u = S[mu].  Both reduce to second-kind systems

    T = -I/2 + K + i*A*V      (Dirichlet trace of the representation)
    M =  I/2 + K*             (exterior normal derivative of S)

solved densely by LU with one step of iterative refinement.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack
from scipy.special import jnp_zeros

from . import geometry, potentials, qpgreen
from .errors import IllConditionedError
from .geometry import DiscreteCurve
from .lattice import Lattice, WaveContext

__all__ = [
    "BVPSolution",
    "solve_dirichlet",
    "solve_neumann",
    "disk_neumann_wavenumbers",
    "CONDITION_WARN_THRESHOLD",
]

CONDITION_WARN_THRESHOLD = 1e8


@dataclass(frozen=True)
class BVPSolution:
    """Solved boundary-value problem: density, representation and diagnostics."""

    problem: str
    density: potentials.Density
    a_flag: int
    condition_estimate: float
    boundary_residual: float
    lattice: Lattice
    wave: WaveContext
    green: qpgreen.GreenEvaluator
    notes: tuple[str, ...]

    def field(self, points, want_gradients: bool = False) -> potentials.FieldSample:
        """Evaluate the represented solution away from the boundary."""
        if self.problem == "dirichlet":
            s = potentials.field_eval("double", self.density, points,
                                      green=self.green, want_gradients=want_gradients)
            if self.a_flag:
                s1 = potentials.field_eval("single", self.density, points,
                                           green=self.green,
                                           want_gradients=want_gradients)
                g = None
                if want_gradients:
                    g = s.gradients + 1j * s1.gradients
                s = potentials.FieldSample(points=s.points,
                                           values=s.values + 1j * s1.values,
                                           gradients=g)
            return s
        return potentials.field_eval("single", self.density, points,
                                     green=self.green, want_gradients=want_gradients)


def _lu_solve_refined(A: np.ndarray, b: np.ndarray, solve_tol: float):
    lu, piv = sla.lu_factor(A)
    x = sla.lu_solve((lu, piv), b)
    # one step of iterative refinement
    r = b - A @ x
    x = x + sla.lu_solve((lu, piv), r)
    r = b - A @ x
    scale = np.max(np.abs(b))
    relres = float(np.max(np.abs(r)) / scale) if scale > 0 else float(np.max(np.abs(r)))
    if relres > solve_tol:
        raise IllConditionedError(
            f"linear solve residual {relres:.3e} exceeds tolerance {solve_tol:.1e}"
        )
    anorm = np.linalg.norm(A, 1)
    rcond = lapack.zgecon(lu, anorm)[0]
    cond = float(1.0 / rcond) if rcond > 0 else float("inf")
    return x, cond


def _nodal_values(curve: DiscreteCurve, data) -> np.ndarray:
    if isinstance(data, potentials.Density):
        return np.asarray(data.values, dtype=complex)
    if callable(data):
        return np.asarray(data(curve.t), dtype=complex)
    return np.asarray(data, dtype=complex)


def _midpoint_taus(N: int, n_check: int) -> np.ndarray:
    # midpoints of the discretization grid itself are never nodes
    idx = np.unique(np.round(np.linspace(0, N - 1, n_check)).astype(int))
    return (2 * idx + 1) * np.pi / N


def _solve_common(problem, curve, lattice, wave, data, a_flag, green, solve_tol,
                  n_check):
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    g = _nodal_values(curve, data)
    N = curve.N
    I = np.eye(N)
    if problem == "dirichlet":
        K = potentials.assemble("double_boundary", curve, lattice, wave,
                                green=green).matrix
        A = -0.5 * I + K
        if a_flag:
            V = potentials.assemble("single_trace", curve, lattice, wave,
                                    green=green).matrix
            A = A + 1j * V
    else:
        Ks = potentials.assemble("adjoint_double", curve, lattice, wave,
                                 green=green).matrix
        A = 0.5 * I + Ks
    mu, cond = _lu_solve_refined(A.astype(complex), g, solve_tol)

    # boundary-condition residual at off-node midpoints
    taus = _midpoint_taus(N, n_check)
    mu_tau = geometry.trig_interpolate(mu, taus)
    g_tau = geometry.trig_interpolate(g, taus)
    if problem == "dirichlet":
        rows = potentials.boundary_trace_rows("double_boundary", curve, taus,
                                              green=green)
        trace = -0.5 * mu_tau + rows @ mu
        if a_flag:
            vrows = potentials.boundary_trace_rows("single_trace", curve, taus,
                                                   green=green)
            trace = trace + 1j * (vrows @ mu)
    else:
        rows = potentials.boundary_trace_rows("adjoint_double", curve, taus,
                                              green=green)
        trace = 0.5 * mu_tau + rows @ mu
    residual = float(np.max(np.abs(trace - g_tau)))

    notes = ()
    if cond > CONDITION_WARN_THRESHOLD:
        msg = (f"condition estimate {cond:.2e} exceeds {CONDITION_WARN_THRESHOLD:.0e}; "
               "wavenumber may sit near an interior eigenvalue")
        notes = (msg,)
        warnings.warn(msg, stacklevel=3)
    return BVPSolution(problem=problem,
                       density=potentials.Density(curve=curve, values=mu),
                       a_flag=int(a_flag), condition_estimate=cond,
                       boundary_residual=residual, lattice=lattice, wave=wave,
                       green=green, notes=notes)


def solve_dirichlet(curve: DiscreteCurve, lattice: Lattice, wave: WaveContext,
                    data, a_flag: int = 0, *, green=None, solve_tol: float = 1e-10,
                    n_check: int = 16) -> BVPSolution:
    """Solve the exterior quasi-periodic Dirichlet problem around one hole.

    Parameters
    ----------
    curve : DiscreteCurve for the hole boundary.
    data : Density, callable of the parameter, or nodal array of boundary values.
    a_flag : 0 or 1; 1 adds the i*V coupling that restores unique solvability
        when k^2 is an interior Neumann eigenvalue of the hole.
    """
    return _solve_common("dirichlet", curve, lattice, wave, data, a_flag, green,
                         solve_tol, n_check)


def solve_neumann(curve: DiscreteCurve, lattice: Lattice, wave: WaveContext,
                  data, *, green=None, solve_tol: float = 1e-10,
                  n_check: int = 16) -> BVPSolution:
    """Solve the exterior quasi-periodic Neumann problem around one hole."""
    return _solve_common("neumann", curve, lattice, wave, data, 0, green,
                         solve_tol, n_check)


def disk_neumann_wavenumbers(radius: float, max_order: int = 3,
                             count: int = 3) -> np.ndarray:
    """Interior Neumann eigen-wavenumbers of a disk, from zeros of J_m'."""
    ks = []
    for m in range(max_order + 1):
        ks.extend(jnp_zeros(m, count) / radius)
    return np.sort(np.asarray(ks))
