"""Nonlinear Robin problem on a shrinking hole: Newton continuation in epsilon.

The field u = S[theta on the physical hole boundary] satisfies the nonlinear
boundary condition d/dnu u = G(u) exactly when the rescaled density theta on
the reference curve solves

    Lambda[eps, r, theta]
        = theta/2 + N1[eps] theta + eps N2 theta + r N3 theta
          - G(eps M1[eps] theta + eps M2 theta + r M3 theta) = 0,

with r the auxiliary variable standing in for eps*log(eps) (slaved to that
value in actual solves; kept free so Lambda is analytic in (eps, r)).  At
(0, 0) this reduces to the Laplace limit equation theta/2 + K* theta = G(0),
whose solution seeds the continuation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import geometry, perturbation, potentials, qpgreen
from .errors import IllConditionedError, NewtonDivergenceError
from .geometry import DiscreteCurve
from .lattice import Lattice, WaveContext

__all__ = [
    "RobinNonlinearity",
    "ContinuationState",
    "OperatorPack",
    "FarFieldFit",
    "make_nonlinearity",
    "derivative_gate",
    "build_pack",
    "limit_density",
    "lambda_residual",
    "lambda_jacobian",
    "solve_theta",
    "continuation_sweep",
    "reconstruct_field",
    "boundary_condition_residual",
    "far_field_scaling",
    "default_epsilon_grid",
]


@dataclass(frozen=True)
class RobinNonlinearity:
    """Pointwise boundary nonlinearity u -> G(u) with derivative."""

    fn: callable
    dfn: callable
    description: str

    def __call__(self, u):
        return self.fn(u)


def derivative_gate(B: RobinNonlinearity, seed: int = 0, npoints: int = 20,
                    tol: float = 1e-7) -> float:
    """Check dfn against central differences at random complex points."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=npoints) + 1j * rng.normal(size=npoints)
    worst = 0.0
    for u in pts:
        h = 1e-6 * max(1.0, abs(u))
        fd = (B.fn(u + h) - B.fn(u - h)) / (2.0 * h)
        err = abs(fd - B.dfn(u)) / max(1.0, abs(B.dfn(u)))
        worst = max(worst, float(err))
    if worst > tol:
        raise ValueError(
            f"nonlinearity derivative mismatches finite differences by {worst:.3e}")
    return worst


def make_nonlinearity(kind: str, **params) -> RobinNonlinearity:
    """Built-in nonlinearities: constant, affine, quadratic, sine, poly2.

    constant: G = c            (params: value)
    affine:   G = a + b u      (params: offset, slope)
    quadratic:G = gamma u^2    (params: gamma)
    sine:     G = gamma sin(u) (params: gamma)
    poly2:    G = a + g u^2    (params: offset, gamma) - offset + pure quadratic
    """
    if kind == "constant":
        c = complex(params.get("value", 1.0))
        B = RobinNonlinearity(lambda u: c + 0.0 * u, lambda u: 0.0 * u,
                              f"constant {c}")
    elif kind == "affine":
        a = complex(params.get("offset", 0.0))
        b = complex(params.get("slope", 1.0))
        B = RobinNonlinearity(lambda u: a + b * u, lambda u: b + 0.0 * u,
                              f"affine {a}+{b}u")
    elif kind == "quadratic":
        g = complex(params.get("gamma", 1.0))
        B = RobinNonlinearity(lambda u: g * u * u, lambda u: 2.0 * g * u,
                              f"quadratic {g}u^2")
    elif kind == "sine":
        g = complex(params.get("gamma", 1.0))
        B = RobinNonlinearity(lambda u: g * np.sin(u), lambda u: g * np.cos(u),
                              f"sine {g}sin(u)")
    elif kind == "poly2":
        a = complex(params.get("offset", 1.0))
        g = complex(params.get("gamma", 0.5))
        B = RobinNonlinearity(lambda u: a + g * u * u, lambda u: 2.0 * g * u,
                              f"poly2 {a}+{g}u^2")
    else:
        raise ValueError(f"unknown nonlinearity kind {kind!r}")
    derivative_gate(B)
    return B


@dataclass(frozen=True)
class ContinuationState:
    """Accepted Newton solution at one (epsilon, r) pair."""

    epsilon: float
    r: float
    theta: potentials.Density
    newton_iterations: int
    residual_norm: float
    step_norms: tuple[float, ...]


@dataclass(frozen=True)
class OperatorPack:
    """The six rescaled assemblies entering Lambda at one epsilon."""

    epsilon: float
    curve: DiscreteCurve
    n1: np.ndarray
    n2: np.ndarray
    n3: np.ndarray
    m1: np.ndarray
    m2: np.ndarray
    m3: np.ndarray

    def linear_parts(self, r: float):
        """(A, Binner) with Lambda = A theta - G(Binner theta)."""
        eps = self.epsilon
        A = 0.5 * np.eye(self.curve.N) + self.n1 + eps * self.n2 + r * self.n3
        Binner = eps * self.m1 + eps * self.m2 + r * self.m3
        return A, Binner


def build_pack(epsilon: float, curve: DiscreteCurve, lattice: Lattice,
               wave: WaveContext, center, *,
               green: qpgreen.GreenEvaluator | None = None) -> OperatorPack:
    """Assemble all rescaled families needed by Lambda at one epsilon."""
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    tables = perturbation.scaled_regular_tables(curve, epsilon, green)
    ops = {}
    for fam in "NM":
        for idx in (1, 2, 3):
            ops[f"{fam.lower()}{idx}"] = perturbation.rescaled_operator(
                fam, idx, epsilon, curve, lattice, wave, center, green=green,
                tables=tables if idx == 2 else None).matrix
    return OperatorPack(epsilon=float(epsilon), curve=curve, **ops)


def _slaved_r(epsilon: float) -> float:
    return float(epsilon * math.log(epsilon)) if epsilon > 0 else 0.0


def limit_density(curve: DiscreteCurve, B: RobinNonlinearity,
                  solve_tol: float = 1e-12) -> potentials.Density:
    """Solve the Laplace limit equation theta/2 + K* theta = G(0)."""
    Ks = potentials.assemble_free("adjoint_double", curve, 0.0).matrix
    A = 0.5 * np.eye(curve.N) + Ks
    rhs = np.full(curve.N, complex(B.fn(0.0)))
    theta = sla.solve(A, rhs)
    res = np.max(np.abs(A @ theta - rhs))
    if res > solve_tol:
        raise IllConditionedError(
            f"limit equation solve residual {res:.3e} exceeds {solve_tol:.1e}")
    return potentials.Density(curve=curve, values=theta)


def lambda_residual(state: ContinuationState, B: RobinNonlinearity,
                    curve: DiscreteCurve, lattice: Lattice, wave: WaveContext,
                    center, *, green=None, pack: OperatorPack | None = None
                    ) -> potentials.Density:
    """Nodal values of Lambda[eps, r, theta]."""
    if pack is None:
        pack = build_pack(state.epsilon, curve, lattice, wave, center, green=green)
    A, Binner = pack.linear_parts(state.r)
    tv = np.asarray(state.theta.values, dtype=complex)
    vals = A @ tv - B.fn(Binner @ tv)
    return potentials.Density(curve=curve, values=vals)


def lambda_jacobian(state: ContinuationState, B: RobinNonlinearity,
                    curve: DiscreteCurve, lattice: Lattice, wave: WaveContext,
                    center, *, green=None, pack: OperatorPack | None = None
                    ) -> np.ndarray:
    """Frechet derivative of Lambda in theta at the given state."""
    if pack is None:
        pack = build_pack(state.epsilon, curve, lattice, wave, center, green=green)
    A, Binner = pack.linear_parts(state.r)
    tv = np.asarray(state.theta.values, dtype=complex)
    gprime = np.asarray(B.dfn(Binner @ tv), dtype=complex)
    return A - gprime[:, None] * Binner


def _newton(pack: OperatorPack, B: RobinNonlinearity, theta0: np.ndarray,
            r: float, tol: float, max_iter: int, max_halvings: int = 8):
    A, Binner = pack.linear_parts(r)
    theta = np.asarray(theta0, dtype=complex).copy()

    def residual(tv):
        return A @ tv - B.fn(Binner @ tv)

    res = residual(theta)
    rnorm = float(np.max(np.abs(res)))
    steps: list[float] = []
    iterations = 0
    while rnorm > tol:
        if iterations >= max_iter:
            raise NewtonDivergenceError(
                f"Newton did not reach tolerance {tol:.1e} in {max_iter} "
                f"iterations (residual {rnorm:.3e})")
        gprime = np.asarray(B.dfn(Binner @ theta), dtype=complex)
        J = A - gprime[:, None] * Binner
        delta = sla.solve(J, -res)
        scale = 1.0
        for _ in range(max_halvings + 1):
            cand = theta + scale * delta
            cres = residual(cand)
            crnorm = float(np.max(np.abs(cres)))
            if crnorm < rnorm or crnorm <= tol:
                break
            scale *= 0.5
        else:
            raise NewtonDivergenceError(
                f"Newton step damping exhausted at residual {rnorm:.3e}")
        steps.append(float(np.max(np.abs(scale * delta))))
        theta, res, rnorm = cand, cres, crnorm
        iterations += 1
    return theta, iterations, rnorm, tuple(steps)


def solve_theta(epsilon: float, B: RobinNonlinearity, curve: DiscreteCurve,
                lattice: Lattice, wave: WaveContext, center, *,
                green: qpgreen.GreenEvaluator | None = None,
                start: np.ndarray | None = None, r: float | None = None,
                tol: float = 1e-12, max_iter: int = 40) -> ContinuationState:
    """Newton solve for theta at one epsilon (r slaved to eps*log(eps)).

    Without an explicit ``start``, a short geometric continuation from the
    limit density keeps Newton inside the contraction neighborhood.
    """
    if epsilon <= 0:
        raise ValueError("solve_theta requires epsilon > 0")
    bound = geometry.containment_bound(curve.curve, center, lattice)
    validated = 0.5 * bound
    if epsilon > validated:
        raise ValueError(
            f"epsilon={epsilon} above the validated radius {validated:.6g}")
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    rr = _slaved_r(epsilon) if r is None else float(r)

    if start is not None:
        theta = np.asarray(start, dtype=complex)
        path = [float(epsilon)]
    else:
        theta = np.asarray(limit_density(curve, B).values, dtype=complex)
        eps_start = min(validated, bound / 4.0)
        if epsilon >= eps_start:
            path = [float(epsilon)]
        else:
            nseg = max(1, int(math.ceil(math.log2(eps_start / epsilon))))
            path = list(eps_start * (epsilon / eps_start) ** (np.arange(1, nseg + 1)
                                                              / nseg))
            path[-1] = float(epsilon)

    state = None
    for j, e in enumerate(path):
        pack = build_pack(e, curve, lattice, wave, center, green=green)
        re = _slaved_r(e) if (r is None or j < len(path) - 1) else rr
        theta, its, rnorm, steps = _newton(pack, B, theta, re, tol, max_iter)
        state = ContinuationState(epsilon=float(e), r=float(re),
                                  theta=potentials.Density(curve=curve,
                                                           values=theta),
                                  newton_iterations=its, residual_norm=rnorm,
                                  step_norms=steps)
    return state


def default_epsilon_grid(curve: DiscreteCurve, center, lattice: Lattice,
                         floor: float = 1e-3) -> list[float]:
    """Geometric sweep grid from min(validated radius, eps0/4) down to floor."""
    bound = geometry.containment_bound(curve.curve, center, lattice)
    start = min(0.5 * bound, bound / 4.0)
    grid = []
    e = start
    while e > floor * (1 + 1e-12):
        grid.append(float(e))
        e *= 0.5
    grid.append(float(floor))
    return grid


def continuation_sweep(B: RobinNonlinearity, curve: DiscreteCurve,
                       lattice: Lattice, wave: WaveContext, center, *,
                       epsilons=None, green=None, tol: float = 1e-12,
                       max_iter: int = 40) -> list[ContinuationState]:
    """Warm-started Newton sweep over a decreasing epsilon grid."""
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    if epsilons is None:
        epsilons = default_epsilon_grid(curve, center, lattice)
    epsilons = sorted((float(e) for e in epsilons), reverse=True)
    theta = np.asarray(limit_density(curve, B).values, dtype=complex)
    states = []
    for e in epsilons:
        pack = build_pack(e, curve, lattice, wave, center, green=green)
        theta, its, rnorm, steps = _newton(pack, B, theta, _slaved_r(e), tol,
                                           max_iter)
        states.append(ContinuationState(
            epsilon=e, r=_slaved_r(e),
            theta=potentials.Density(curve=curve, values=theta),
            newton_iterations=its, residual_norm=rnorm, step_norms=steps))
    return states


def _physical_density(state: ContinuationState, center,
                      lattice: Lattice) -> potentials.Density:
    curve = state.theta.curve
    cfg = geometry.HoleConfig(reference=curve.curve, center=tuple(center),
                              epsilon=state.epsilon, lattice=lattice)
    phys = geometry.discretize(geometry.rescale(cfg), curve.N)
    return potentials.Density(curve=phys, values=np.asarray(state.theta.values))


def reconstruct_field(state: ContinuationState, probes, *, lattice: Lattice,
                      wave: WaveContext, center,
                      green: qpgreen.GreenEvaluator | None = None,
                      want_gradients: bool = False) -> potentials.FieldSample:
    """Evaluate u = S[physical-hole density] at probe points."""
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    dens = _physical_density(state, center, lattice)
    return potentials.field_eval("single", dens, probes, green=green,
                                 want_gradients=want_gradients)


def boundary_condition_residual(state: ContinuationState, B: RobinNonlinearity,
                                *, lattice: Lattice, wave: WaveContext, center,
                                green: qpgreen.GreenEvaluator | None = None,
                                n_check: int = 16) -> float:
    """Sup-norm Robin defect d/dnu u - G(u) at off-node physical boundary points."""
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    dens = _physical_density(state, center, lattice)
    phys = dens.curve
    idx = np.unique(np.round(np.linspace(0, phys.N - 1, n_check)).astype(int))
    taus = (2 * idx + 1) * np.pi / phys.N
    tv = np.asarray(dens.values, dtype=complex)
    th_tau = geometry.trig_interpolate(tv, taus)
    vrows = potentials.boundary_trace_rows("single_trace", phys, taus, green=green)
    krows = potentials.boundary_trace_rows("adjoint_double", phys, taus, green=green)
    u_tau = vrows @ tv
    dnu_tau = 0.5 * th_tau + krows @ tv
    return float(np.max(np.abs(dnu_tau - B.fn(u_tau))))


@dataclass(frozen=True)
class FarFieldFit:
    """Least-squares fit u(eps, x) = eps*(c0 + c1 eps + c2 eps log eps)."""

    probes: np.ndarray
    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    exponents: np.ndarray
    fit_residuals: np.ndarray


def far_field_scaling(states, probes, *, lattice: Lattice, wave: WaveContext,
                      center, green: qpgreen.GreenEvaluator | None = None,
                      fit_max_epsilon: float | None = None) -> FarFieldFit:
    """Fit the epsilon-scaling of the reconstructed field at fixed probes.

    The three-term model eps*(c0 + c1 eps + c2 eps log eps) is asymptotic;
    ``fit_max_epsilon`` restricts the fit to the small-epsilon tail of the
    sweep where the neglected O(eps^2 log^2 eps) terms are negligible.
    """
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    states = sorted(states, key=lambda s: s.epsilon)
    if fit_max_epsilon is not None:
        states = [s for s in states if s.epsilon <= fit_max_epsilon]
    if len(states) < 4:
        warnings.warn("epsilon sweep is short; far-field fit may be degenerate",
                      stacklevel=2)
    pts = np.atleast_2d(np.asarray(probes, dtype=float))
    eps = np.array([s.epsilon for s in states])
    U = np.stack([reconstruct_field(s, pts, lattice=lattice, wave=wave,
                                    center=center, green=green).values
                  for s in states], axis=0)  # (n_eps, n_probes)
    basis = np.stack([np.ones_like(eps), eps, eps * np.log(eps)], axis=1)
    coef, *_ = np.linalg.lstsq(basis, U / eps[:, None], rcond=None)
    resid = np.max(np.abs(basis @ coef - U / eps[:, None]), axis=0)
    # leading exponent from a log-log slope
    logs = np.log(np.abs(U))
    x = np.log(eps)
    slope = ((logs * x[:, None]).mean(axis=0) - x.mean() * logs.mean(axis=0)) \
        / (np.mean(x * x) - x.mean() ** 2)
    return FarFieldFit(probes=pts, c0=coef[0], c1=coef[1], c2=coef[2],
                       exponents=slope, fit_residuals=resid)
