"""Nystrom assembly of boundary-layer operators and field evaluation.

Kernels split into A1(t,s) log(4 sin^2((t-s)/2)) + A2(t,s) with A1, A2 smooth;
the log factor is integrated by the classical spectrally accurate product
quadrature on equispaced nodes and A2 by the plain trapezoid rule.  The same
splits serve the quasi-periodic kernel (free-space profile plus analytic
remainder of the periodic Green function) and the free-space kernel at any
wavenumber, including zero (the Laplace limit the perturbation theory needs).

Operator kinds:

- ``single_trace``      V:  integral of G(x_t - x_s) mu(s) dsigma_s
- ``double_boundary``   K:  integral of  d/dnu(y_s) G(x_t - x_s) mu(s) dsigma_s
- ``adjoint_double``    K*: integral of  d/dnu(x_t) G(x_t - x_s) mu(s) dsigma_s
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import qpgreen, specfun
from .errors import ResonanceError
from .geometry import DiscreteCurve
from .lattice import Lattice, WaveContext

__all__ = [
    "OPERATOR_KINDS",
    "FIELD_KINDS",
    "BoundaryOperator",
    "Density",
    "FieldSample",
    "AccuracyGuardWarning",
    "log_weight_matrix",
    "log_weight_rows",
    "regular_tables",
    "assemble",
    "assemble_free",
    "boundary_trace_rows",
    "field_eval",
    "cell_flux_integral",
]

OPERATOR_KINDS = ("single_trace", "double_boundary", "adjoint_double")
FIELD_KINDS = ("single", "double")


class AccuracyGuardWarning(UserWarning):
    """Field evaluation requested closer to the source curve than the node spacing."""


@dataclass(frozen=True)
class BoundaryOperator:
    """Dense Nystrom matrix for one boundary operator."""

    kind: str
    matrix: np.ndarray
    curve: DiscreteCurve
    lattice: Lattice | None
    wave: WaveContext

    def apply(self, values: np.ndarray) -> np.ndarray:
        return self.matrix @ np.asarray(values)


@dataclass(frozen=True)
class Density:
    """Nodal boundary density on a discrete curve."""

    curve: DiscreteCurve
    values: np.ndarray


@dataclass(frozen=True)
class FieldSample:
    """Field values (and optionally gradients) at scattered points."""

    points: np.ndarray
    values: np.ndarray
    gradients: np.ndarray | None = None


# --------------------------------------------------------------------------- #
# log-quadrature weights
# --------------------------------------------------------------------------- #

def log_weight_rows(N: int, taus) -> np.ndarray:
    """Quadrature weights R_j(tau) for integrands f(s) log(4 sin^2((tau-s)/2)).

    Exact for trigonometric polynomials f of degree < N/2 at any target tau.
    """
    if N % 2 != 0:
        raise ValueError("even node count required")
    n = N // 2
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    tj = 2.0 * np.pi * np.arange(N) / N
    delta = taus[:, None] - tj[None, :]
    out = np.zeros((len(taus), N))
    for m in range(1, n):
        out -= (2.0 * np.pi / n) * np.cos(m * delta) / m
    out -= (np.pi / n ** 2) * np.cos(n * delta)
    return out


def log_weight_matrix(N: int) -> np.ndarray:
    """Node-to-node log-quadrature weights (circulant in i - j)."""
    if N % 2 != 0:
        raise ValueError("even node count required")
    n = N // 2
    l = np.arange(N)
    ang = np.pi * l / n
    row = np.zeros(N)
    for m in range(1, n):
        row -= (2.0 * np.pi / n) * np.cos(m * ang) / m
    row -= (np.pi / n ** 2) * np.cos(n * ang)
    idx = (np.arange(N)[:, None] - np.arange(N)[None, :]) % N
    return row[idx]


# --------------------------------------------------------------------------- #
# kernel tables
# --------------------------------------------------------------------------- #

def _smooth_log_ratio(r: np.ndarray, dt: np.ndarray, diag_speeds: np.ndarray | None):
    """L = log(r / (2 |sin(dt/2)|)); its diagonal limit is log |x'|."""
    s = 2.0 * np.abs(np.sin(0.5 * dt))
    with np.errstate(divide="ignore", invalid="ignore"):
        L = np.log(r / s)
    if diag_speeds is not None:
        np.fill_diagonal(L, np.log(diag_speeds))
    return L


def _profiles(k: complex, r: np.ndarray):
    z = k * r
    J2, N2 = specfun.fs_coefficients(2, z)
    gJ, gN = specfun.fs_coefficients_dz_over_z(2, z)
    return J2, N2, gJ, gN


def _regular_tables(green: qpgreen.GreenEvaluator, d: np.ndarray):
    flat = d.reshape(-1, 2)
    RV, RG = qpgreen.regular_part(green, flat, enforce_ball=False)
    return RV.reshape(d.shape[:-1]), RG.reshape(d.shape)


def _assemble_matrix(kind: str, dc: DiscreteCurve, k: complex,
                     RV: np.ndarray | None, RG: np.ndarray | None) -> np.ndarray:
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    N = dc.N
    x, nu, kappa, speeds, t = dc.points, dc.normals, dc.curvature, dc.speeds, dc.t
    d = x[:, None, :] - x[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=2))
    dt = t[:, None] - t[None, :]
    L = _smooth_log_ratio(r, dt, speeds)
    J2, N2, gJ, gN = _profiles(k, r)
    KW = log_weight_matrix(N)
    tp = 2.0 * np.pi / N
    k2 = k * k

    if kind == "single_trace":
        A1 = 0.5 * J2
        core = J2 * L + N2
        if RV is not None:
            core = core + RV
    else:
        if kind == "adjoint_double":
            nd = np.einsum("ti,tsi->ts", nu, d)
            rg = np.einsum("ti,tsi->ts", nu, RG) if RG is not None else None
        else:  # double_boundary: d/dnu(y) G = -nu(s) . grad G
            nd = -np.einsum("si,tsi->ts", nu, d)
            rg = -np.einsum("si,tsi->ts", nu, RG) if RG is not None else None
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = nd / (r * r)
        # curvature limit of (nu . d)/r^2: +kappa/2 for both orientations
        np.fill_diagonal(ratio, 0.5 * kappa)
        A1 = 0.5 * k2 * gJ * nd
        core = k2 * gJ * nd * L + J2 * ratio + k2 * gN * nd
        if rg is not None:
            core = core + rg
    A2 = core
    M = (KW * A1 + tp * A2) * speeds[None, :]
    return M


def regular_tables(curve: DiscreteCurve, green: qpgreen.GreenEvaluator):
    """Pairwise regular-part tables (values, gradients) for a discrete curve.

    Precompute once and pass to :func:`assemble` via ``tables=`` when several
    operator kinds are assembled on the same curve — the table is the dominant
    assembly cost and is identical across kinds.
    """
    d = curve.points[:, None, :] - curve.points[None, :, :]
    return _regular_tables(green, d)


def assemble(kind: str, curve: DiscreteCurve, lattice: Lattice, wave: WaveContext,
             *, green: qpgreen.GreenEvaluator | None = None,
             tables=None) -> BoundaryOperator:
    """Assemble a quasi-periodic boundary operator on the given curve."""
    if wave.is_resonant:
        raise ResonanceError("cannot assemble at a resonant wavenumber")
    if green is None:
        green = qpgreen.make_green_evaluator(lattice, wave.k)
    dc = curve
    if tables is None:
        tables = regular_tables(dc, green)
    RV, RG = tables
    M = _assemble_matrix(kind, dc, green.k, RV, RG)
    return BoundaryOperator(kind=kind, matrix=M, curve=dc, lattice=lattice, wave=wave)


def assemble_free(kind: str, curve: DiscreteCurve, k: complex) -> BoundaryOperator:
    """Assemble the free-space analogue at wavenumber k (k = 0 gives Laplace)."""
    M = _assemble_matrix(kind, curve, complex(k), None, None)
    return BoundaryOperator(kind=kind, matrix=M, curve=curve, lattice=None,
                            wave=WaveContext(k=complex(k)))


def boundary_trace_rows(kind: str, dc: DiscreteCurve, taus, *,
                        green: qpgreen.GreenEvaluator | None = None,
                        k: complex | None = None) -> np.ndarray:
    """Off-node evaluation rows of a boundary operator at parameters taus.

    With ``green`` the quasi-periodic kernel is used (k taken from it); without
    it the free-space kernel at wavenumber ``k``.  taus must avoid the nodes
    (the on-node limits live in the assembled matrices).
    """
    if kind not in OPERATOR_KINDS:
        raise ValueError(f"unknown operator kind {kind!r}")
    taus = np.atleast_1d(np.asarray(taus, dtype=float))
    N = dc.N
    curve = dc.curve
    xt = curve.position(taus)
    vt = curve.velocity(taus)
    st = np.sqrt(np.sum(vt * vt, axis=-1))
    nut = np.stack([vt[:, 1], -vt[:, 0]], axis=-1) / st[:, None]
    if not curve.outward_normal:
        nut = -nut
    kk = green.k if green is not None else complex(k)
    d = xt[:, None, :] - dc.points[None, :, :]
    r = np.sqrt(np.sum(d * d, axis=2))
    if np.any(r == 0.0):
        raise ValueError("off-node targets must avoid the quadrature nodes")
    dt = taus[:, None] - dc.t[None, :]
    L = _smooth_log_ratio(r, dt, None)
    J2, N2, gJ, gN = _profiles(kk, r)
    if green is not None:
        RV, RG = _regular_tables(green, d)
    else:
        RV = RG = None
    KW = log_weight_rows(N, taus)
    tp = 2.0 * np.pi / N
    k2 = kk * kk
    if kind == "single_trace":
        A1 = 0.5 * J2
        core = J2 * L + N2
        if RV is not None:
            core = core + RV
    else:
        if kind == "adjoint_double":
            nd = np.einsum("ti,tsi->ts", nut, d)
            rg = np.einsum("ti,tsi->ts", nut, RG) if RG is not None else None
        else:
            nd = -np.einsum("si,tsi->ts", dc.normals, d)
            rg = -np.einsum("si,tsi->ts", dc.normals, RG) if RG is not None else None
        A1 = 0.5 * k2 * gJ * nd
        core = k2 * gJ * nd * L + J2 * nd / (r * r) + k2 * gN * nd
        if rg is not None:
            core = core + rg
    return (KW * A1 + tp * core) * dc.speeds[None, :]


# --------------------------------------------------------------------------- #
# field evaluation
# --------------------------------------------------------------------------- #

def _distance_guard(dc: DiscreteCurve, lattice: Lattice | None, points: np.ndarray):
    spacing = float(np.max(dc.weights))
    y = dc.points
    if lattice is not None:
        shifts = np.array([[i, j] for i in (-1, 0, 1) for j in (-1, 0, 1)], dtype=float)
        y = (y[None, :, :] + (shifts * lattice.q)[:, None, :]).reshape(-1, 2)
    dmin = np.min(
        np.sqrt(np.sum((points[:, None, :] - y[None, :, :]) ** 2, axis=2)), axis=1
    )
    if np.any(dmin < spacing):
        warnings.warn(
            f"{int(np.sum(dmin < spacing))} evaluation point(s) closer to the source "
            f"curve than the node spacing {spacing:.3g}; accuracy degrades there",
            AccuracyGuardWarning,
            stacklevel=3,
        )


def field_eval(kind: str, density: Density, points, *,
               green: qpgreen.GreenEvaluator, lattice: Lattice | None = None,
               want_gradients: bool = False, check_distance: bool = True) -> FieldSample:
    """Evaluate a layer potential off the curve by plain quadrature."""
    if kind not in FIELD_KINDS:
        raise ValueError(f"unknown field kind {kind!r}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dc = density.curve
    mu_w = np.asarray(density.values) * dc.weights
    if check_distance:
        _distance_guard(dc, lattice if lattice is not None else green.lattice, pts)
    d = (pts[:, None, :] - dc.points[None, :, :]).reshape(-1, 2)
    if kind == "single":
        v, g = qpgreen.green_eval(green, d)
        v = v.reshape(len(pts), dc.N)
        vals = v @ mu_w
        grads = None
        if want_gradients:
            g = g.reshape(len(pts), dc.N, 2)
            grads = np.einsum("pji,j->pi", g, mu_w)
    else:
        _, g = qpgreen.green_eval(green, d)
        g = g.reshape(len(pts), dc.N, 2)
        # d/dnu(y) G(x - y) = -nu(y) . (grad G)(x - y)
        vals = -np.einsum("pji,ji,j->p", g, dc.normals, mu_w)
        grads = None
        if want_gradients:
            H = qpgreen.green_hessian(green, d).reshape(len(pts), dc.N, 2, 2)
            grads = -np.einsum("pjil,jl,j->pi", H, dc.normals, mu_w)
    return FieldSample(points=pts, values=vals, gradients=grads)


def cell_flux_integral(kind: str, density: Density, *,
                       green: qpgreen.GreenEvaluator, panels: int = 6,
                       order: int = 12) -> tuple[complex, float]:
    """Outward flux pairing of a layer field over the cell boundary.

    Returns (integral of dv/dnu * conj(v) over the cell boundary, integral of
    |v|^2): quasi-periodicity makes the first vanish for real quasi-momentum.
    """
    from scipy.special import roots_legendre

    lat = green.lattice
    q = lat.q
    xg, wg = roots_legendre(order)
    nodes, weights, normals = [], [], []
    for axis in range(2):
        L = q[axis]
        for pl in range(panels):
            a = L * pl / panels
            b = L * (pl + 1) / panels
            s = 0.5 * (a + b) + 0.5 * (b - a) * xg
            w = 0.5 * (b - a) * wg
            for side, nrm in ((0.0, -1.0), (q[1 - axis], 1.0)):
                pts = np.zeros((order, 2))
                pts[:, axis] = s
                pts[:, 1 - axis] = side
                nv = np.zeros(2)
                nv[1 - axis] = nrm
                nodes.append(pts)
                weights.append(w)
                normals.append(np.tile(nv, (order, 1)))
    pts = np.concatenate(nodes, axis=0)
    ws = np.concatenate(weights, axis=0)
    nrm = np.concatenate(normals, axis=0)
    sample = field_eval(kind, density, pts, green=green, want_gradients=True,
                        check_distance=False)
    dn = np.einsum("pi,pi->p", nrm, sample.gradients)
    flux = complex(np.sum(ws * dn * np.conj(sample.values)))
    norm2 = float(np.sum(ws * np.abs(sample.values) ** 2).real)
    return flux, norm2
