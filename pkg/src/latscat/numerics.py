"""Special functions and quadrature building blocks.

Provides outgoing Hankel functions of orders 0 and 1, the Dirichlet
kernel, the constant-phase (steepest descent) contour through the saddle
of cos(theta), the regularized self-pixel weight for the log-singular
kernel, and small complex polylogarithm helpers used by the accelerated
lattice Green's function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import bernoulli as _sps_bernoulli
from scipy.special import hankel1, j0, j1, spence, y0, y1, zeta

__all__ = [
    "hankel0",
    "hankel1_out",
    "dirichlet",
    "ContourQuadrature",
    "contour_nodes",
    "self_cell_weight",
    "polylog2",
    "polylog3",
]


_H0_SERIES_M = 48
_H0_HARMONIC = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, _H0_SERIES_M + 1))])
_H0_SWITCH = 13.0
_H0_ASYM_M = 17
_H0_ASYM_A = [1.0]
for _m in range(1, _H0_ASYM_M + 1):
    _H0_ASYM_A.append(_H0_ASYM_A[-1] * (-((2 * _m - 1) ** 2)) / (8.0 * _m))

_EULER_GAMMA = 0.5772156649015328606


def _h0_series(z):
    """Ascending series J0 + i Y0, reliable for |z| below the switch radius."""
    q = 0.25 * z * z
    j = np.ones_like(z)
    ysum = np.zeros_like(z)
    term = np.ones_like(z)
    for m in range(1, _H0_SERIES_M + 1):
        term = term * (-q) / (m * m)
        j = j + term
        ysum = ysum - term * _H0_HARMONIC[m]
    y = (2.0 / np.pi) * ((np.log(0.5 * z) + _EULER_GAMMA) * j + ysum)
    return j + 1j * y


def _h0_asym_core(z, kind: int):
    acc = np.zeros_like(z)
    w = np.ones_like(z)
    s = 1j if kind == 1 else -1j
    for m in range(_H0_ASYM_M + 1):
        acc = acc + _H0_ASYM_A[m] * w
        w = w * (s / z)
    return np.sqrt(2.0 / (np.pi * z)) * np.exp(s * (z - 0.25 * np.pi)) * acc


def _h0_asym(z):
    """Large-|z| evaluation of H0^(1), all sectors off the cut.

    The expansion loses accuracy near the negative real axis; arguments
    with |arg z| > pi/2 are rotated into the front sector through the
    circuit relations H0^(1)(v e^{+-i pi}) = H0^(1)(v) -+ 2 J0(v) with
    J0 = (H^(1) + H^(2)) / 2 from the two stable expansions.
    """
    out = np.empty_like(z)
    front = np.abs(np.angle(z)) <= 0.5 * np.pi
    if np.any(front):
        out[front] = _h0_asym_core(z[front], 1)
    back = ~front
    if np.any(back):
        zb = z[back]
        upper = np.angle(zb) > 0
        v = np.where(upper, zb * np.exp(-1j * np.pi), zb * np.exp(1j * np.pi))
        h1 = _h0_asym_core(v, 1)
        j0v = 0.5 * (h1 + _h0_asym_core(v, 2))
        out[back] = np.where(upper, h1 - 2.0 * j0v, h1 + 2.0 * j0v)
    return out


def hankel0(z):
    """Outgoing Hankel function H0^(1)(z) off z = 0 and the negative real axis.

    Positive real arguments take the fast real Bessel route. Complex
    arguments combine the ascending series (|z| <= 11) with the asymptotic
    expansion, reaching ~1e-11 relative accuracy over the working window
    0.01 <= |z| <= 100, |Im z| <= 10; both regimes are checked against
    independent oracles in the test suite. z = 0 is a logarithmic
    singularity and raises.
    """
    za = np.asarray(z)
    if np.any(za == 0):
        raise ValueError("H0 has a logarithmic singularity at z = 0")
    if np.isrealobj(za):
        zr = np.asarray(za, dtype=float)
        if np.all(zr > 0):
            out = j0(zr) + 1j * y0(zr)
            return complex(out) if out.shape == () else out
    zc = np.asarray(za, dtype=complex)
    if np.all(np.abs(zc.imag) < 1e-300) and np.all(zc.real > 0):
        out = j0(zc.real) + 1j * y0(zc.real)
        return complex(out) if out.shape == () else out
    if np.any((zc.imag == 0) & (zc.real <= 0)):
        raise ValueError("H0 branch cut along the negative real axis")
    flat = zc.ravel()
    out = np.empty_like(flat)
    az = np.abs(flat)
    small = az <= _H0_SWITCH
    # moderate |z| with sizable |Im z|: the series cancels catastrophically
    # (H0 is exponentially small against J0, Y0); defer to the library there
    hard = small & (np.abs(flat.imag) > 1.8) & (az > 4.0)
    # back sector with Im z > 0: the circuit relation cancels two large
    # exponentials; also one for the library
    hard |= (~small) & (flat.imag > -0.5) & (flat.real < 0)
    if np.any(small & ~hard):
        out[small & ~hard] = _h0_series(flat[small & ~hard])
    if np.any(hard):
        out[hard] = hankel1(0, flat[hard])
    rest = ~small & ~hard
    if np.any(rest):
        out[rest] = _h0_asym(flat[rest])
    out = out.reshape(zc.shape)
    return complex(out) if out.shape == () else out


def hankel1_out(z):
    """Outgoing Hankel function H1^(1)(z), z != 0; fast path for real z > 0."""
    za = np.asarray(z)
    if np.any(za == 0):
        raise ValueError("H1 diverges at z = 0")
    if np.isrealobj(za) and np.all(np.asarray(za, dtype=float) > 0):
        zr = np.asarray(za, dtype=float)
        out = j1(zr) + 1j * y1(zr)
        return complex(out) if out.shape == () else out
    out = hankel1(1, np.asarray(za, dtype=complex))
    return complex(out) if out.shape == () else out


def dirichlet(N: int, t):
    """Dirichlet kernel sin((N + 1/2) t) / sin(t/2), vectorized in t.

    The removable singularities at t = 2 pi m are detected through
    |sin(t/2)| < 1e-8 and evaluated by their limit value (2N + 1) with the
    alternating sign handled exactly: near t = 2 pi m the ratio tends to
    (2N + 1) independent of m.
    """
    if N < 0:
        raise ValueError("N must be a nonnegative integer")
    t = np.asarray(t, dtype=float)
    den = np.sin(0.5 * t)
    num = np.sin((N + 0.5) * t)
    small = np.abs(den) < 1e-8
    den_safe = np.where(small, 1.0, den)
    ratio = num / den_safe
    # L'Hopital at t = 2 pi m: (N + 1/2) cos((N+1/2) t) / (cos(t/2) / 2)
    lim = (2 * N + 1) * np.cos((N + 0.5) * t) / np.where(
        np.abs(np.cos(0.5 * t)) < 0.5, 1.0, np.cos(0.5 * t)
    )
    out = np.where(small, lim, ratio)
    return float(out) if out.shape == () else out


@dataclass(frozen=True)
class ContourQuadrature:
    """Discretized constant-phase contour of theta -> cos(theta).

    Parametrized by cos(theta(s)) = 1 + i s^2, running from
    -pi/2 + i inf (s -> -inf) through the saddle theta = 0 (s = 0) to
    pi/2 - i inf (s -> +inf). Along it, exp(i lam cos theta) decays as
    exp(-lam s^2). sin(theta) = s sqrt(s^2 - 2i) with the principal
    square root, which is continuous on the real s line and matches
    theta ~ s sqrt(-2i) at the saddle.
    """

    s_nodes: np.ndarray
    theta_values: np.ndarray
    dtheta_ds: np.ndarray
    s_weights: np.ndarray
    truncation: float
    decay_scale: float

    @property
    def cos_theta(self) -> np.ndarray:
        return 1.0 + 1j * self.s_nodes**2

    @property
    def sin_theta(self) -> np.ndarray:
        return self.s_nodes * np.sqrt(self.s_nodes**2 - 2j)

    def integrate(self, values: np.ndarray) -> complex:
        """Trapezoid integral of values(theta) dtheta over the contour."""
        return complex(np.sum(values * self.dtheta_ds * self.s_weights))


def contour_nodes(lam: float, tol: float, n_nodes: int | None = None,
                  osc_scale: float = 0.0) -> ContourQuadrature:
    """Build the contour truncated and sampled for a given decay scale.

    Parameters
    ----------
    lam : float
        Gaussian decay scale: integrands behave like exp(-lam s^2).
    tol : float
        Target truncation/quadrature tolerance, in (0, 1e-2].
    n_nodes : int, optional
        Node count override.
    osc_scale : float
        Largest additional phase rate (integrands may carry factors like
        exp(i c s^2) with |c| up to osc_scale); raises the node density.
    """
    if lam <= 0:
        raise ValueError("decay scale must be positive")
    if not (0 < tol <= 1e-2):
        raise ValueError("tol must lie in (0, 1e-2]")
    S = np.sqrt(np.log(1.0 / tol) / lam) + 2.0
    if n_nodes is None:
        # resolve the Gaussian (width 1/sqrt(lam)) and any oscillatory phase
        per_unit = 12.0 * max(np.sqrt(lam), 1.0)
        total_phase = (lam + abs(osc_scale)) * S * S
        n_nodes = int(max(257, 2 * S * per_unit, 3.0 * total_phase))
        n_nodes = min(n_nodes | 1, 200001)
    s = np.linspace(-S, S, n_nodes)
    root = np.sqrt(s * s - 2j)  # Im(s^2 - 2i) = -2: principal branch is smooth
    theta = np.arccos(1.0 + 1j * s * s)
    # arccos does not track our branch; rebuild theta from the defining ODE sign
    theta = np.where(s >= 0, theta, -theta)
    dtheta = -2j / root
    w = np.full(n_nodes, s[1] - s[0])
    w[0] *= 0.5
    w[-1] *= 0.5
    return ContourQuadrature(
        s_nodes=s,
        theta_values=theta,
        dtheta_ds=dtheta,
        s_weights=w,
        truncation=float(S),
        decay_scale=float(lam),
    )


def self_cell_weight(k: complex, pixel_area: float) -> complex:
    """Integral of i pi H0(k |r|) over the equal-area disk of one pixel.

    With rho = sqrt(area / pi), the radial integral has the closed form
    int_0^rho H0(k r) r dr = rho H1(k rho)/k + 2i/(pi k^2), so the weight
    is 2 pi^2 i (rho H1(k rho)/k + 2i/(pi k^2)). Divides by zero at k = 0.
    """
    if k == 0:
        raise ValueError("self weight undefined at k = 0")
    if pixel_area <= 0:
        raise ValueError("pixel_area must be positive")
    rho = np.sqrt(pixel_area / np.pi)
    radial = rho * hankel1_out(k * rho) / k + 2j / (np.pi * k * k)
    return 2j * np.pi**2 * radial


# ---------------------------------------------------------------------------
# complex polylogarithms on |z| <= 1 (lattice tail sums)
# ---------------------------------------------------------------------------

def polylog2(z):
    """Li_2(z) for complex z, via the library Spence integral."""
    return spence(1.0 - np.asarray(z, dtype=complex))


_LI3_SERIES_TERMS = 72
_LI3_EXP_ORDER = 44


def _zeta_int(s: int) -> float:
    """zeta at integers s <= 3, s != 1 (negative values via Bernoulli numbers)."""
    if s == 1:
        raise ValueError("zeta pole")
    if s > 1:
        return float(zeta(s))
    if s == 0:
        return -0.5
    n = -s
    return float(-_BERN[n + 1] / (n + 1))


_BERN = _sps_bernoulli(_LI3_EXP_ORDER + 2)
# zeta(3 - j) / j!, the j = 2 slot handled by the explicit log term
_LI3_C_PLUS = []
# Li_{3-j}(-1) / j! for the expansion around z = -1
_LI3_C_MINUS = []
for _j in range(_LI3_EXP_ORDER + 1):
    _s = 3 - _j
    _fact = float(math.factorial(_j))
    if _s == 1:
        _LI3_C_PLUS.append(None)
        _LI3_C_MINUS.append(-np.log(2.0) / _fact)
    else:
        _z = _zeta_int(_s)
        _LI3_C_PLUS.append(_z / _fact)
        _LI3_C_MINUS.append((2.0 ** (1 - _s) - 1.0) * _z / _fact)


def _li3_exp_plus(z):
    """Li_3(e^w) for w = log z, |w| < 2 pi (log term at j = 2)."""
    w = np.log(z)
    acc = np.full_like(w, _LI3_C_PLUS[0])
    acc += _LI3_C_PLUS[1] * w
    acc += 0.5 * w * w * (1.5 - np.log(-w + 0j))
    wp = w * w
    for j in range(3, _LI3_EXP_ORDER + 1):
        wp = wp * w
        c = _LI3_C_PLUS[j]
        if c:
            acc = acc + c * wp
    return acc


def _li3_exp_minus(z):
    """Li_3(-e^w) for w = log(-z), |w| < pi (regular series)."""
    w = np.log(-z)
    acc = np.zeros_like(w)
    wp = np.ones_like(w)
    for j in range(0, _LI3_EXP_ORDER + 1):
        c = _LI3_C_MINUS[j]
        if c:
            acc = acc + c * wp
        wp = wp * w
    return acc


def polylog3(z):
    """Li_3(z) for complex |z| <= 1 (a bit beyond is fine).

    Small |z| by the defining series; arguments in the right half plane by
    the expansion of Li_3(e^w) in w = log z, and in the left half plane by
    the alternating expansion of Li_3(-e^w) in w = log(-z), which converges
    for |w| < pi.
    """
    zz = np.atleast_1d(np.asarray(z, dtype=complex))
    out = np.empty_like(zz)
    small = np.abs(zz) <= 0.55
    if np.any(small):
        m = np.arange(1, _LI3_SERIES_TERMS + 1)
        out[small] = (zz[small][:, None] ** m / m**3).sum(axis=1)
    big = ~small
    if np.any(big):
        zb = zz[big]
        res = np.empty_like(zb)
        front = np.real(zb) >= 0
        if np.any(front):
            res[front] = _li3_exp_plus(zb[front])
        if np.any(~front):
            res[~front] = _li3_exp_minus(zb[~front])
        out[big] = res
    return out if np.asarray(z).ndim else out[0]
