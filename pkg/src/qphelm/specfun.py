"""Entire special functions and the free-space fundamental-solution family.

The free-space kernel in dimension n splits into an entire log coefficient and
an entire remainder profile::

    S_n(x, k) = k**(n-2) * Jn(k|x|) * log|x| + Nn(k|x|) / |x|**(n-2)

with Jn and Nn even entire functions (returned by :func:`fs_coefficients`).
Near the origin both profiles are summed as power series in z**2 with explicit
truncation control; past the series radius they are evaluated through standard
Bessel identities after an even reflection that keeps arguments away from the
branch cut of Y_nu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special as sp

from .errors import SeriesTruncationError

__all__ = [
    "EntireSeries",
    "FundamentalSolutionValue",
    "entire_bessel_J",
    "entire_neumann",
    "entire_neumann_dz_over_z",
    "fs_coefficients",
    "fs_coefficients_dz_over_z",
    "fundamental_solution",
    "fundamental_solution_dk",
    "analytic_correction",
    "jtilde_series",
    "ntilde_series",
    "recurrence_residual",
    "SERIES_RADIUS",
]

EULER_GAMMA = float(np.euler_gamma)

# Largest |z| routed to the power series.  Beyond ~35 the alternating series
# loses all precision in double arithmetic; 12 keeps the peak term below ~5e3
# so at least 12 significant digits survive the cancellation.
SERIES_RADIUS = 12.0

_MAX_DEGREE = 220
_TAIL_SAFETY = 0.1


def _harmonic(m: int) -> float:
    """Partial harmonic sum h_m = sum_{j=1..m} 1/j (h_0 = 0)."""
    return float(np.sum(1.0 / np.arange(1, m + 1))) if m > 0 else 0.0


@dataclass(frozen=True)
class EntireSeries:
    """Even entire function stored as coefficients of z**(2m).

    Evaluation sums terms in ascending order, so two series that share a
    coefficient table but differ in truncation degree produce results whose
    difference is exactly the omitted tail.
    """

    order: float
    coefficients: np.ndarray
    truncation_degree: int
    target_tolerance: float = 1e-14
    kind: str = "generic"

    def __call__(self, z):
        z = np.asarray(z)
        z = z if np.iscomplexobj(z) else z.astype(float)
        w = z * z
        c = self.coefficients
        acc = np.zeros_like(w)
        wp = np.ones_like(w)
        last = 0.0
        for m in range(self.truncation_degree + 1):
            term = c[m] * wp
            acc = acc + term
            if m >= self.truncation_degree - 1:
                last = max(last, float(np.max(np.abs(term))) if term.size else 0.0)
            wp = wp * w
        if last > _TAIL_SAFETY * self.target_tolerance:
            raise SeriesTruncationError(
                f"series (kind={self.kind}, order={self.order}) not converged at "
                f"max|z|={float(np.max(np.abs(z))):.3g}: last term {last:.3g} "
                f"exceeds {_TAIL_SAFETY * self.target_tolerance:.3g}"
            )
        return acc

    def eval_dz_over_z(self, z):
        """Evaluate f'(z)/z, itself an even entire function."""
        z = np.asarray(z)
        z = z if np.iscomplexobj(z) else z.astype(float)
        w = z * z
        c = self.coefficients
        acc = np.zeros_like(w)
        wp = np.ones_like(w)
        last = 0.0
        for m in range(1, self.truncation_degree + 1):
            term = (2.0 * m) * c[m] * wp
            acc = acc + term
            if m >= self.truncation_degree - 1:
                last = max(last, float(np.max(np.abs(term))) if term.size else 0.0)
            wp = wp * w
        if last > _TAIL_SAFETY * self.target_tolerance:
            raise SeriesTruncationError(
                f"derivative series (kind={self.kind}, order={self.order}) not "
                f"converged at max|z|={float(np.max(np.abs(z))):.3g}"
            )
        return acc


def _trim_degree(coeffs: np.ndarray, zmax: float, tol: float) -> int:
    """Smallest degree whose trailing three terms stay below tol at |z| = zmax."""
    with np.errstate(divide="ignore"):
        logmags = np.log(np.abs(coeffs)) + 2.0 * np.arange(len(coeffs)) * np.log(zmax)
    logtol = np.log(tol)
    for d in range(4, len(coeffs)):
        if np.all(logmags[d - 2 : d + 1] < logtol):
            return d
    return len(coeffs) - 1


def jtilde_series(nu: float, degree: int | None = None, *, zmax: float = 20.0,
                  target_tolerance: float = 1e-14) -> EntireSeries:
    """Series for z**(-nu) J_nu(z): coefficients (-1)^m / (m! Gamma(m+nu+1) 2^(2m+nu)).

    Valid for any real order; reciprocal-Gamma zeros make negative integer
    orders come out right automatically.
    """
    cap = _MAX_DEGREE if degree is None else degree
    c = np.zeros(cap + 1)
    # Direct formula while leading coefficients may vanish (negative integer
    # orders) or the recurrence divisor crosses zero; recurrence afterwards to
    # dodge factorial overflow.
    direct_span = int(np.ceil(abs(nu))) + 1
    for m in range(cap + 1):
        if m <= direct_span or abs(m + nu) < 1e-12 or (c[m - 1] == 0.0 and m <= 30):
            c[m] = (-1.0) ** m * sp.rgamma(m + nu + 1.0) / (sp.factorial(m) * 2.0 ** (2 * m + nu))
        elif c[m - 1] == 0.0:
            c[m] = 0.0  # underflowed tail: keep at zero
        else:
            c[m] = -c[m - 1] / (4.0 * m * (m + nu))
    d = _trim_degree(c, zmax, 1e-17) if degree is None else degree
    return EntireSeries(order=float(nu), coefficients=c[: d + 1], truncation_degree=d,
                        target_tolerance=target_tolerance, kind="jtilde")


def ntilde_series(p: int, degree: int | None = None, *, zmax: float = 20.0,
                  target_tolerance: float = 1e-14) -> EntireSeries:
    """Series for the log-free part of the integer Neumann function.

    For p in {0, 1} this is z**p Y_p(z) - (2/pi)(log(z/2) + gamma) z**p J_p(z),
    an even entire function of z.
    """
    if p not in (0, 1):
        raise ValueError(f"integer Neumann profile only provided for p in {{0, 1}}, got {p}")
    cap = _MAX_DEGREE if degree is None else degree
    c = np.zeros(cap + 1)
    if p == 0:
        # coefficient of z^(2m): (2/pi) (-1)^(m+1) h_m / (4^m (m!)^2), m >= 1,
        # built by the harmonic-weighted ratio recurrence to avoid overflow
        c[1] = 1.0 / (2.0 * np.pi)
        for m in range(2, cap + 1):
            c[m] = -c[m - 1] * (_harmonic(m) / _harmonic(m - 1)) / (4.0 * m * m)
    else:
        # -2/pi - (1/pi) sum_{m>=0} (-1)^m (h_m + h_{m+1}) z^(2m+2) / (m!(m+1)! 2^(2m+1))
        c[0] = -2.0 / np.pi
        c[1] = -1.0 / (2.0 * np.pi)
        for m in range(2, cap + 1):
            num = _harmonic(m - 1) + _harmonic(m)
            den = _harmonic(m - 2) + _harmonic(m - 1)
            c[m] = -c[m - 1] * (num / den) / (4.0 * m * (m - 1))
    d = _trim_degree(c, zmax, 1e-17) if degree is None else degree
    return EntireSeries(order=float(p), coefficients=c[: d + 1], truncation_degree=d,
                        target_tolerance=target_tolerance, kind="ntilde")


def recurrence_residual(series: EntireSeries) -> float:
    """Max relative mismatch between the stored table and a recurrence recomputation."""
    c = series.coefficients
    nu = series.order
    worst = 0.0
    if series.kind == "jtilde":
        for m in range(1, series.truncation_degree + 1):
            if abs(m + nu) < 1e-12:
                continue
            pred = -c[m - 1] / (4.0 * m * (m + nu))
            scale = max(abs(c[m]), abs(pred), 1e-300)
            worst = max(worst, abs(c[m] - pred) / scale)
    elif series.kind == "ntilde":
        p = int(nu)
        for m in range(2, series.truncation_degree + 1):
            if p == 0:
                num, den = _harmonic(m), _harmonic(m - 1)
                fac = 4.0 * m * m
            else:
                num = _harmonic(m - 1) + _harmonic(m)
                den = _harmonic(m - 2) + _harmonic(m - 1)
                fac = 4.0 * m * (m - 1)
            if den == 0.0:
                continue
            pred = -c[m - 1] * (num / den) / fac
            scale = max(abs(c[m]), abs(pred), 1e-300)
            worst = max(worst, abs(c[m] - pred) / scale)
    else:
        raise ValueError(f"no recurrence known for kind={series.kind!r}")
    return worst


_jtilde_cache: dict[float, EntireSeries] = {}
_ntilde_cache: dict[int, EntireSeries] = {}


def _get_jtilde(nu: float) -> EntireSeries:
    key = float(nu)
    if key not in _jtilde_cache:
        _jtilde_cache[key] = jtilde_series(key)
    return _jtilde_cache[key]


def _get_ntilde(p: int) -> EntireSeries:
    if p not in _ntilde_cache:
        _ntilde_cache[p] = ntilde_series(p)
    return _ntilde_cache[p]


def _reflect(z: np.ndarray) -> np.ndarray:
    """Even reflection into Re w >= 0 (real arrays: |z|), off Y_nu's branch cut."""
    if np.iscomplexobj(z):
        return np.where(z.real >= 0.0, z, -z)
    return np.abs(z)


def _split_eval(z, series_fn, far_fn):
    """Evaluate series inside SERIES_RADIUS, far formula outside, preserving shape."""
    z = np.asarray(z)
    scalar = z.ndim == 0
    zf = np.atleast_1d(z)
    out = np.zeros(zf.shape, dtype=complex)
    near = np.abs(zf) <= SERIES_RADIUS
    if np.any(near):
        out[near] = series_fn(zf[near])
    if np.any(~near):
        out[~near] = far_fn(_reflect(zf[~near]))
    if not np.iscomplexobj(z):
        out = out.real
    return out[0] if scalar else out


def entire_bessel_J(nu: float, z):
    """z**(-nu) J_nu(z), entire in z and even; series near 0, reflected jv beyond."""
    if abs(nu) > 10.0:
        raise ValueError(f"order out of supported range |nu| <= 10: {nu}")
    ser = _get_jtilde(float(nu))
    return _split_eval(z, ser, lambda w: np.power(w, -nu) * sp.jv(nu, w))


def entire_neumann(n: int, z):
    """Log-free entire part of the Neumann profile in dimension n (n in {2, 4})."""
    if n not in (2, 4):
        raise ValueError(f"entire Neumann profile provided for n in {{2, 4}}, got {n}")
    p = (n - 2) // 2
    ser = _get_ntilde(p)

    def far(w):
        lg = np.log(w / 2.0) + EULER_GAMMA
        return w ** p * (sp.yv(p, w) - (2.0 / np.pi) * lg * sp.jv(p, w))

    return _split_eval(z, ser, far)


def entire_neumann_dz_over_z(n: int, z):
    """d/dz of the entire Neumann profile, divided by z (even entire)."""
    if n not in (2, 4):
        raise ValueError(f"entire Neumann profile provided for n in {{2, 4}}, got {n}")
    p = (n - 2) // 2
    ser = _get_ntilde(p)

    def far(w):
        lg = np.log(w / 2.0) + EULER_GAMMA
        if p == 0:
            d = -sp.yv(1, w) - (2.0 / np.pi) * sp.jv(0, w) / w + (2.0 / np.pi) * lg * sp.jv(1, w)
        else:
            d = w * (sp.yv(0, w) - (2.0 / np.pi) * lg * sp.jv(0, w)) - (2.0 / np.pi) * sp.jv(1, w)
        return d / w

    return _split_eval(z, ser.eval_dz_over_z, far)


# Prefactor tying the half-integer Bessel series to the 3-d kernel profile:
# N_3(z) = -cos(z)/(4 pi) = -2**(-5/2) pi**(-1/2) * z**(1/2) J_{-1/2}(z).
_N3_FACTOR = -(2.0 ** -2.5) * np.pi ** -0.5
# N_3'(z)/z = sin(z)/(4 pi z) = sqrt(pi/2)/(4 pi) * z**(-1/2) J_{1/2}(z).
_N3_DERIV_FACTOR = np.sqrt(np.pi / 2.0) / (4.0 * np.pi)


def fs_coefficients(n: int, z):
    """Entire profiles (Jn, Nn) of the kernel split in dimension n (n in {2, 3})."""
    z = np.asarray(z)
    if n == 2:
        return entire_bessel_J(0.0, z) / (2.0 * np.pi), entire_neumann(2, z) / 4.0
    if n == 3:
        return np.zeros(z.shape), _N3_FACTOR * entire_bessel_J(-0.5, z)
    raise ValueError(f"kernel profiles provided for n in {{2, 3}}, got {n}")


def fs_coefficients_dz_over_z(n: int, z):
    """(Jn'(z)/z, Nn'(z)/z): even entire derivative profiles for gradient assembly."""
    z = np.asarray(z)
    if n == 2:
        return (
            -entire_bessel_J(1.0, z) / (2.0 * np.pi),
            entire_neumann_dz_over_z(2, z) / 4.0,
        )
    if n == 3:
        return (
            np.zeros(z.shape),
            _N3_DERIV_FACTOR * entire_bessel_J(0.5, z),
        )
    raise ValueError(f"kernel profiles provided for n in {{2, 3}}, got {n}")


@dataclass(frozen=True)
class FundamentalSolutionValue:
    """Value and spatial gradient of a kernel evaluation."""

    value: np.ndarray
    gradient: np.ndarray


def _radii(x: np.ndarray, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=float) if not np.iscomplexobj(x) else np.asarray(x)
    if x.shape[-1] != n:
        raise ValueError(f"points must have trailing dimension {n}, got shape {x.shape}")
    return np.sqrt(np.sum(x * x, axis=-1))


def fundamental_solution(n: int, x, k) -> FundamentalSolutionValue:
    """Free-space kernel S_n and its gradient at points x != 0.

    Parameters
    ----------
    n : 2 or 3
    x : array_like, shape (..., n)
    k : complex wavenumber
    """
    x = np.asarray(x, dtype=float)
    r = _radii(x, n)
    if np.any(r == 0.0):
        raise ValueError("fundamental solution is singular at the origin")
    z = k * r
    J, N = fs_coefficients(n, z)
    gJ, gN = fs_coefficients_dz_over_z(n, z)
    kfac = k ** (n - 2)
    logr = np.log(r)
    value = kfac * J * logr + N / r ** (n - 2)
    radial = (
        kfac * (k * k * gJ * logr + J / r ** 2)
        + k * k * gN / r ** (n - 2)
        - (n - 2) * N / r ** n
    )
    gradient = x * radial[..., None]
    return FundamentalSolutionValue(value=value, gradient=gradient)


def fundamental_solution_dk(n: int, x, k):
    """Derivative of the kernel value with respect to the wavenumber."""
    x = np.asarray(x, dtype=float)
    r = _radii(x, n)
    if np.any(r == 0.0):
        raise ValueError("fundamental solution is singular at the origin")
    z = k * r
    J, _ = fs_coefficients(n, z)
    gJ, gN = fs_coefficients_dz_over_z(n, z)
    logr = np.log(r)
    out = k ** (n - 1) * r ** 2 * gJ * logr + k * r ** 2 * gN / r ** (n - 2)
    if n != 2:
        out = out + (n - 2) * k ** (n - 3) * J * logr
    return out


def analytic_correction(n: int, x, k) -> FundamentalSolutionValue:
    """Coefficient of log|x| in the kernel split: k**(n-2) Jn(k|x|), defined at x = 0 too.

    This is the entire profile that carries the log-of-scale slack in the
    kernel rescaling identity.
    """
    x = np.asarray(x, dtype=float)
    r = _radii(x, n)
    z = k * r
    J, _ = fs_coefficients(n, z)
    gJ, _ = fs_coefficients_dz_over_z(n, z)
    kfac = k ** (n - 2)
    value = kfac * J
    gradient = kfac * (k * k) * x * gJ[..., None]
    return FundamentalSolutionValue(value=value, gradient=gradient)
