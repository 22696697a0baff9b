import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from latscat.numerics import (
    ContourQuadrature,
    contour_nodes,
    dirichlet,
    hankel0,
    hankel1_out,
    polylog2,
    polylog3,
    self_cell_weight,
)
from helpers import bessel_j0_series, bessel_y0_series, dirichlet_direct


def _j(order, z):
    h1 = hankel0(z) if order == 0 else hankel1_out(z)
    h2 = np.conj(hankel0(np.conj(z)) if order == 0 else hankel1_out(np.conj(z)))
    return 0.5 * (h1 + h2), (h1 - h2) / 2j  # (J, Y) from the two Hankel kinds


def test_hankel0_series_oracle():
    val = hankel0(1.0)
    ref = bessel_j0_series(1.0) + 1j * bessel_y0_series(1.0)
    assert abs(val - ref) < 1e-12
    assert abs(val - (0.76519768 + 0.08825696j)) < 1e-7


def test_hankel0_large_argument_modulus():
    x = 50.0
    assert abs(abs(hankel0(x)) * np.sqrt(np.pi * x / 2) - 1.0) < 1e-3


def test_wronskian_identity():
    z = 2 + 0.5j
    J0, Y0 = _j(0, z)
    J1, Y1 = _j(1, z)
    assert abs((J0 * Y1 - J1 * Y0) - (-2.0 / (np.pi * z))) < 1e-10


def test_hankel_regime_overlap(rng):
    # ascending series and asymptotic expansion agree around the switch
    # radius; the plain asymptotic expansion floors at exp(-2|z|), so the
    # overlap window sits at |z| ~ 12..14 rather than lower
    from latscat.numerics import _h0_asym, _h0_series

    z = (12.0 + 2.0 * rng.random(200)) * np.exp(1j * rng.uniform(-0.15, 0.15, 200))
    z = z.astype(complex)
    d = np.abs(_h0_series(z) - _h0_asym(z)) / np.abs(_h0_series(z))
    assert d.max() < 1e-9


def test_hankel_accuracy_window(rng):
    from scipy.special import hankel1 as h1ref

    mag = np.exp(rng.uniform(np.log(0.01), np.log(100.0), 4000))
    ph = rng.uniform(-0.99 * np.pi, 0.99 * np.pi, 4000)
    z = mag * np.exp(1j * ph)
    z = z[(np.abs(z.imag) <= 10) & (z.imag != 0)]
    rel = np.abs(hankel0(z) - h1ref(0, z)) / np.abs(h1ref(0, z))
    assert rel.max() < 1e-10


def test_hankel_zero_raises():
    with pytest.raises(ValueError):
        hankel0(0.0)
    with pytest.raises(ValueError):
        hankel1_out(np.array([1.0, 0.0]))


def test_dirichlet_examples():
    assert dirichlet(5, 0.0) == 11.0
    assert abs(dirichlet(2, np.pi / 2) - (-1.0)) < 1e-14
    assert abs(dirichlet(3, 2 * np.pi) - 7.0) < 1e-9


@settings(max_examples=40, deadline=None)
@given(N=st.integers(0, 9), t=st.floats(-8.0, 8.0))
def test_dirichlet_matches_exponential_sum(N, t):
    assert abs(dirichlet(N, t) - dirichlet_direct(N, t)[0]) < 1e-8 * (2 * N + 1)


@settings(max_examples=30, deadline=None)
@given(N=st.integers(0, 8), t=st.floats(-6.0, 6.0))
def test_dirichlet_periodic_and_even(N, t):
    assert abs(dirichlet(N, t) - dirichlet(N, t + 2 * np.pi)) < 1e-8 * (2 * N + 1)
    assert abs(dirichlet(N, t) - dirichlet(N, -t)) < 1e-10 * (2 * N + 1)


def test_dirichlet_unit_mass():
    t = np.linspace(-np.pi, np.pi, 400001)
    for N in (1, 4, 9):
        val = np.trapezoid(dirichlet(N, t), t)
        assert abs(val - 2 * np.pi) < 1e-9


def test_contour_defining_properties():
    c = contour_nodes(3.0, 1e-9)
    assert np.max(np.abs(np.cos(c.theta_values) - (1 + 1j * c.s_nodes**2))) < 1e-10
    assert np.max(np.abs(c.cos_theta**2 + c.sin_theta**2 - 1.0)) < 1e-12
    # saddle node and orientation
    i0 = np.argmin(np.abs(c.s_nodes))
    assert abs(c.theta_values[i0]) < 1e-6
    assert c.theta_values[0].real < 0 and c.theta_values[0].imag > 0
    assert c.theta_values[-1].real > 0 and c.theta_values[-1].imag < 0
    # decay invariant Re(i lam cos) = -lam s^2
    lam = 3.0
    assert np.max(np.abs(np.real(1j * lam * c.cos_theta) + lam * c.s_nodes**2)) < 1e-12


def test_contour_reproduces_hankel():
    for z in (1.0, 5.0, 10.0):
        c = contour_nodes(float(z), 1e-10)
        val = c.integrate(np.exp(1j * z * c.cos_theta)) / np.pi
        assert abs(val - hankel0(z)) < 1e-8


def test_contour_random_z(rng):
    for _ in range(10):
        z = rng.uniform(0.5, 20) + 1j * rng.uniform(-2, 2)
        c = contour_nodes(abs(z), 1e-9, osc_scale=3.0)
        val = c.integrate(np.exp(1j * z * c.cos_theta)) / np.pi
        assert abs(val - hankel0(z)) < 1e-7 * max(1.0, abs(hankel0(z)))


def test_contour_self_convergence():
    z = 5.0
    c1 = contour_nodes(z, 1e-8)
    c2 = contour_nodes(z, 1e-8, n_nodes=2 * len(c1.s_nodes) + 1)
    v1 = c1.integrate(np.exp(1j * z * c1.cos_theta)) / np.pi
    v2 = c2.integrate(np.exp(1j * z * c2.cos_theta)) / np.pi
    assert abs(v1 - v2) < 1e-9


def test_contour_rejects_bad_args():
    with pytest.raises(ValueError):
        contour_nodes(-1.0, 1e-8)
    with pytest.raises(ValueError):
        contour_nodes(1.0, 0.5)


def test_self_cell_weight_against_quadrature():
    k0, rho = 2.0, 0.05

    def f_re(r):
        return np.real(1j * np.pi * hankel0(k0 * r) * 2 * np.pi * r)

    def f_im(r):
        return np.imag(1j * np.pi * hankel0(k0 * r) * 2 * np.pi * r)

    re, _ = quad(f_re, 0, rho, epsabs=1e-14)
    im, _ = quad(f_im, 0, rho, epsabs=1e-14)
    val = self_cell_weight(k0, np.pi * rho**2)
    assert abs(val - (re + 1j * im)) < 1e-10


def test_self_cell_weight_small_argument_trend():
    # leading behavior: area * i pi * (1 + (2i/pi)(ln(k rho / 2) + gamma - 1/2))-ish;
    # check the log trend numerically between two small radii
    k0 = 2.0
    vals = []
    for rho in (1e-3, 1e-4):
        area = np.pi * rho**2
        w = self_cell_weight(k0, area)
        vals.append((w / (1j * np.pi * area) - 1.0))
    # real part of the correction grows like (2/pi)|ln rho|
    g1, g2 = np.imag(vals[0]), np.imag(vals[1])
    assert g2 < g1 < 0
    assert abs((g2 - g1) - (2 / np.pi) * np.log(1e-4 / 1e-3)) < 0.01


def test_self_cell_weight_radiation_sign():
    assert self_cell_weight(2.0, 0.01).imag > 0
    with pytest.raises(ValueError):
        self_cell_weight(0.0, 0.01)


def test_polylogs(rng):
    z = 0.7 * np.exp(0.9j)
    m = np.arange(1, 200001)
    assert abs(polylog2(z) - np.sum(z**m / m**2)) < 1e-12
    assert abs(polylog3(z) - np.sum(z**m / m**3)) < 1e-12
    zs = np.exp(1j * np.pi * np.array([2 / 3, -2 / 3, 0.2, 0.97]))
    ref = np.array([np.sum(zv**m / m**3) for zv in zs])
    assert np.max(np.abs(polylog3(zs) - ref)) < 1e-9
