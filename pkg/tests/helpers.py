"""Independent oracles used by the test suite.

Everything here is deliberately written against the defining integrals
and series, not against the package implementations, so cross-checks stay
two-sided.
"""

import numpy as np
from scipy.integrate import quad
from scipy.special import hankel1, jv


def bessel_j0_series(z, terms=60):
    """Ascending series for J0."""
    z = complex(z)
    q = -0.25 * z * z
    term, total = 1.0 + 0j, 1.0 + 0j
    for m in range(1, terms):
        term *= q / (m * m)
        total += term
    return total


def bessel_y0_series(z, terms=60):
    """Ascending series for Y0 (principal branch)."""
    z = complex(z)
    gamma = 0.5772156649015328606
    q = -0.25 * z * z
    term = 1.0 + 0j
    hsum = 0.0
    total = 0.0 + 0j
    for m in range(1, terms):
        term *= q / (m * m)
        hsum += 1.0 / m
        total += -term * hsum  # signs carried by q^m
    return (2.0 / np.pi) * ((np.log(0.5 * z) + gamma) * bessel_j0_series(z, terms) + total)


def q_oracle_polar_disk(center, radius, contrast, K, tol=1e-12):
    """(1/2pi) int over one disk of e^{-i K.r}, by nested adaptive quadrature
    in polar coordinates (smooth integrand)."""
    Kx, Kz = complex(K[0]), complex(K[1])

    def radial(which):
        def f(r):
            def ang(phi):
                x = center[0] + r * np.cos(phi)
                z = center[1] + r * np.sin(phi)
                val = np.exp(-1j * (Kx * x + Kz * z))
                return val.real if which == "re" else val.imag

            re, _ = quad(ang, 0.0, 2.0 * np.pi, epsabs=tol, limit=200)
            return re * r

        out, _ = quad(f, 0.0, radius, epsabs=tol, limit=200)
        return out

    return contrast * (radial("re") + 1j * radial("im")) / (2.0 * np.pi)


def cylinder_scattering_coeffs(k, a, chi, nmax):
    """Partial-wave coefficients s_n of a penetrable cylinder, e^{ikx} incidence."""
    k1 = k * np.sqrt(1.0 + chi)
    ns = np.arange(-nmax, nmax + 1)
    out = {}
    for n in ns:
        p, q = k * a, k1 * a
        jp = 0.5 * (jv(n - 1, p) - jv(n + 1, p))
        jq = 0.5 * (jv(n - 1, q) - jv(n + 1, q))
        hp = 0.5 * (hankel1(n - 1, p) - hankel1(n + 1, p))
        num = k * jp * jv(n, q) - k1 * jv(n, p) * jq
        den = k1 * hankel1(n, p) * jq - k * jv(n, q) * hp
        out[n] = -num / den
    return out


def cylinder_field(points, k, a, chi, nmax=25):
    """Total field of a penetrable cylinder at the origin, e^{ikx} incidence."""
    pts = np.atleast_2d(points)
    r = np.hypot(pts[:, 0], pts[:, 1])
    th = np.arctan2(pts[:, 1], pts[:, 0])
    sn = cylinder_scattering_coeffs(k, a, chi, nmax)
    out = np.zeros(len(pts), dtype=complex)
    for n in range(-nmax, nmax + 1):
        out += (1j) ** n * (jv(n, k * r) - sn[n] * hankel1(n, k * r)) * np.exp(1j * n * th)
    return out


def qp_green_lattice_oracle(dx, dz, k, kx, n_direct=300000):
    """Quasi-periodic Green's function by direct lattice sum plus the
    leading asymptotic tail through the Lerch transcendent (real k only)."""
    import mpmath as mp

    n = np.arange(-n_direct, n_direct + 1)
    r = np.sqrt((dx - n) ** 2 + dz**2)
    s = np.sum(1j * np.pi * hankel1(0, k * r) * np.exp(1j * kx * n))
    pref = 1j * np.pi * np.sqrt(2.0 / (np.pi * k)) * np.exp(-0.25j * np.pi)
    for sign in (+1, -1):
        mu = k + sign * kx
        aa = n_direct + 1 - sign * dx
        tail = pref * np.exp(-1j * k * sign * dx) * np.exp(1j * mu * (n_direct + 1)) \
            * complex(mp.lerchphi(np.exp(1j * mu), 0.5, aa))
        s += tail
    return s


def dirichlet_direct(N, t):
    """Dirichlet kernel as the exponential sum (independent of the ratio form)."""
    n = np.arange(-N, N + 1)
    return np.real(np.sum(np.exp(1j * np.outer(np.atleast_1d(t), n)), axis=1))
