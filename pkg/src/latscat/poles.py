"""Resonance pole location in the complex k^2 plane.

Poles are parameter values where the homogeneous scattering operator
(I - A(k)) turns singular. The finite array uses the volume collocation
operator; the infinite array the one-cell quasi-periodic operator whose
channel square roots are continued analytically across the real axis, so
evaluating below the axis lands on the resonance sheet directly: open
channels pick up growing transverse behavior there, which is the flipped
configuration in the convention that keeps Im beta >= 0 on every sheet.
Explicit sheet_flips reach the remaining sheets. The search iterates
Muller's derivative-free method on the smallest-magnitude eigenvalue of
the operator, estimated by inverse iteration; that indicator is analytic
near a simple pole, unlike the smallest singular value, which is kept for
reporting.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .bloch import assemble_bloch, channels
from .finite_solver import (
    ToeplitzScatterOperator,
    WaveParams,
    assemble_dense,
    _AUTO_DENSE_MAX,
)
from .numerics import hankel0, hankel1_out
from .scatterer import CellGrid, ScattererSpec, Shape, build_cell

__all__ = [
    "PoleRecord",
    "SweepResult",
    "muller",
    "sigma_min_finite",
    "sigma_min_infinite",
    "find_pole",
    "sweep_N",
    "bic_scan",
    "cylinder_pole_oracle",
    "make_double_disk",
]

logger = logging.getLogger(__name__)

POLE_TOL_DEFAULT = 1e-8
_INV_ITERS = 5


@dataclass(frozen=True)
class PoleRecord:
    """One located pole: k2 = k_r^2 - i Gamma, Gamma = -Im k2."""

    N: int | None  # half-width, None marks the infinite array
    k2: complex
    sigma_min: float
    iterations: int
    sheet: tuple = ()

    @property
    def gamma(self) -> float:
        return -float(np.imag(self.k2))

    @property
    def k(self) -> complex:
        r = np.sqrt(self.k2)
        return r if r.real > 0 else -r


@dataclass(frozen=True)
class SweepResult:
    """Pole locations across array half-widths plus fitted decay rates."""

    records: list
    reference: PoleRecord
    fit_exponent_gamma: float
    fit_exponent_k2: float
    fit_residual: float

    @property
    def gamma_inf(self) -> float:
        return self.reference.gamma


def muller(f, seed: complex, tol: float = 1e-10, maxiter: int = 50,
           spread: float = 1e-3, escape_factor: float = 50.0):
    """Muller iteration for a complex root of an analytic function.

    Returns (root, f(root), iterations). Raises RuntimeError when the
    iterates leave the seed's basin (three consecutive growth steps) or
    the budget runs out.
    """
    h = spread * max(abs(seed), 1.0)
    xs = [seed - h, seed + h, seed]
    fs = [f(x) for x in xs]
    best = min(abs(v) for v in fs)
    grow = 0
    for it in range(maxiter):
        x0, x1, x2 = xs
        f0, f1, f2 = fs
        q = (x2 - x1) / (x1 - x0)
        a = q * f2 - q * (1 + q) * f1 + q * q * f0
        b = (2 * q + 1) * f2 - (1 + q) ** 2 * f1 + q * q * f0
        c = (1 + q) * f2
        disc = np.sqrt(b * b - 4 * a * c)
        den = b + disc if abs(b + disc) >= abs(b - disc) else b - disc
        if den == 0:
            raise RuntimeError("Muller breakdown: flat quadratic model")
        x3 = x2 - (x2 - x1) * 2 * c / den
        f3 = f(x3)
        xs = [x1, x2, x3]
        fs = [f1, f2, f3]
        if abs(f3) > escape_factor * best:
            grow += 1
            if grow >= 3:
                raise RuntimeError("Muller escaped the seed basin")
        else:
            grow = 0
        best = min(best, abs(f3))
        if abs(x3 - x2) < tol * max(abs(x3), 1.0):
            return x3, f3, it + 1
    raise RuntimeError(f"Muller did not converge in {maxiter} iterations")


def _sigma_and_indicator(solve, matvec, n: int, iters: int = _INV_ITERS):
    """(sigma_min estimate, smallest-magnitude eigenvalue estimate).

    Inverse iteration with a fixed deterministic start vector; the
    Rayleigh quotient of the converged direction gives the eigenvalue.
    """
    rng = np.random.default_rng(20240)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = np.inf
    for _ in range(iters):
        w = solve(v)
        nw = np.linalg.norm(w)
        sigma = 1.0 / nw
        v = w / nw
    lam = np.vdot(v, matvec(v))
    return float(sigma), complex(lam)


def _finite_solver_factory(grid: CellGrid, N: int, dense_cap: int):
    """Returns k -> (solve, matvec, n) for the finite-array operator."""

    base = grid.base_cell()
    n = (2 * N + 1) * len(base.active)

    def make(k: complex):
        wave = WaveParams(k)
        if n <= dense_cap:
            M = np.eye(n, dtype=complex) - assemble_dense(base, wave, N)
            lu = scipy.linalg.lu_factor(M)
            return (lambda b: scipy.linalg.lu_solve(lu, b)), (lambda b: M @ b), n
        op = ToeplitzScatterOperator(base, wave, N)

        def solve(b):
            x, flag = scipy.sparse.linalg.gmres(
                op.as_linear_operator(), b, rtol=1e-8, atol=0.0,
                restart=min(n, 400), maxiter=2000,
            )
            if flag != 0:
                logger.warning("inner GMRES flag %d during pole search", flag)
            return x

        return solve, op.apply, n

    return make


def sigma_min_finite(grid: CellGrid, N: int, k: complex,
                     dense_cap: int = _AUTO_DENSE_MAX) -> float:
    """Smallest singular value estimate of (I - A(k)) for the finite array."""
    if k == 0 or (np.real(k) <= 0 and np.imag(k) == 0):
        raise ValueError("k must avoid the negative real axis and zero")
    make = _finite_solver_factory(grid, N, dense_cap)
    solve, matvec, n = make(complex(k))
    if n == 0:
        return 1.0
    sigma, _ = _sigma_and_indicator(solve, matvec, n)
    return sigma


def sigma_min_infinite(grid: CellGrid, wave: WaveParams, sheet_flips=(),
                       M: int = 8, M0: int = 128) -> float:
    """Smallest singular value estimate of the one-cell quasi-periodic operator."""
    chan = channels(wave, M).with_flips(sheet_flips) if len(np.atleast_1d(sheet_flips)) else channels(wave, M)
    A = assemble_bloch(grid, wave, chan, M0=M0)
    if A.shape[0] == 0:
        return 1.0
    lu = scipy.linalg.lu_factor(A)
    sigma, _ = _sigma_and_indicator(
        lambda b: scipy.linalg.lu_solve(lu, b), lambda b: A @ b, A.shape[0]
    )
    return sigma


def find_pole(indicator, seed_k2: complex, tol: float = 1e-8,
              pole_tol: float = POLE_TOL_DEFAULT, maxiter: int = 50,
              label: str | int | None = None, sheet: tuple = ()) -> PoleRecord:
    """Locate a simple pole by Muller iteration on an analytic indicator.

    indicator(k2) -> (eigenvalue_estimate, sigma_min_estimate); the root of
    the eigenvalue estimate is the pole. Converges when the step and the
    indicator are both below tolerance.
    """
    history = {}

    def f(k2):
        lam, sig = indicator(k2)
        history[complex(k2)] = sig
        return lam

    root, fval, iters = muller(f, seed_k2, tol=tol, maxiter=maxiter)
    if abs(fval) > pole_tol:
        raise RuntimeError(
            f"indicator {abs(fval):.2e} above pole tolerance at the converged point"
        )
    sigma = history.get(complex(root))
    if sigma is None:
        sigma = min(history.values())
    return PoleRecord(
        N=label if isinstance(label, int) else None,
        k2=complex(root),
        sigma_min=float(sigma),
        iterations=iters,
        sheet=tuple(sheet),
    )


def finite_indicator(grid: CellGrid, N: int, dense_cap: int = _AUTO_DENSE_MAX):
    """k2 -> (eigenvalue, sigma) indicator for the finite array."""
    make = _finite_solver_factory(grid, N, dense_cap)

    def indicator(k2: complex):
        k = np.sqrt(complex(k2))
        if k.real < 0:
            k = -k
        solve, matvec, n = make(k)
        sigma, lam = _sigma_and_indicator(solve, matvec, n)
        return lam, sigma

    return indicator


def infinite_indicator(grid: CellGrid, kx: float, sheet_flips=(), M: int = 8,
                       M0: int = 128):
    """k2 -> (eigenvalue, sigma) indicator for the one-cell lattice operator."""

    def indicator(k2: complex):
        k = np.sqrt(complex(k2))
        if k.real < 0:
            k = -k
        wave = WaveParams(k, kx)
        chan = channels(wave, M)
        if len(np.atleast_1d(sheet_flips)):
            chan = chan.with_flips(sheet_flips)
        A = assemble_bloch(grid, wave, chan, M0=M0)
        lu = scipy.linalg.lu_factor(A)
        sigma, lam = _sigma_and_indicator(
            lambda b: scipy.linalg.lu_solve(lu, b), lambda b: A @ b, A.shape[0]
        )
        return lam, sigma

    return indicator


def sweep_N(grid: CellGrid, reference: PoleRecord, N_list=(2, 4, 8, 16, 32),
            tol: float = 1e-8, pole_tol: float = POLE_TOL_DEFAULT,
            dense_cap: int = _AUTO_DENSE_MAX) -> SweepResult:
    """Track the finite-array pole over increasing half-widths.

    Each half-width seeds the next search; the decay of |Gamma_N - Gamma|
    and |k2_N - k2_ref| is fitted as a power of N over the largest four
    converged points. Aborts on non-convergence, keeping partial results.
    """
    N_list = sorted(int(n) for n in N_list)
    records = []
    seed = reference.k2
    for N in N_list:
        ind = finite_indicator(grid, N, dense_cap=dense_cap)
        try:
            rec = find_pole(ind, seed, tol=tol, pole_tol=pole_tol, label=N)
        except RuntimeError as exc:
            logger.error("pole search failed at N=%d: %s", N, exc)
            break
        records.append(rec)
        seed = rec.k2
        logger.info("N=%d pole at %.6f%+.2ei (sigma %.1e, %d its)",
                    N, rec.k2.real, rec.k2.imag, rec.sigma_min, rec.iterations)
    if len(records) < 2:
        raise RuntimeError("sweep collected fewer than two poles")

    tailn = min(4, len(records))
    Ns = np.array([r.N for r in records[-tailn:]], dtype=float)
    dg = np.array([abs(r.gamma - reference.gamma) for r in records[-tailn:]])
    dk = np.array([abs(r.k2 - reference.k2) for r in records[-tailn:]])

    def fit(d):
        good = d > 0
        if np.sum(good) < 2:
            return np.nan, np.nan
        c = np.polyfit(np.log(Ns[good]), np.log(d[good]), 1)
        resid = np.sqrt(np.mean(
            (np.polyval(c, np.log(Ns[good])) - np.log(d[good])) ** 2
        ))
        return -c[0], resid

    eg, rg = fit(dg)
    ek, rk = fit(dk)
    return SweepResult(
        records=records,
        reference=reference,
        fit_exponent_gamma=float(eg),
        fit_exponent_k2=float(ek),
        fit_residual=float(np.nanmax([rg, rk])),
    )


def make_double_disk(separation: float, radius: float = 0.25,
                     contrast: float = 5.0) -> ScattererSpec:
    """Two identical disks at (0, +-separation/2): the cell of a double array."""
    h = float(separation)
    return ScattererSpec(
        [
            Shape("disk", (0.0, +0.5 * h), radius, contrast),
            Shape("disk", (0.0, -0.5 * h), radius, contrast),
        ]
    )


def bic_scan(h_grid, wave_seed_k2: complex, kx: float = 0.0,
             radius: float = 0.25, contrast: float = 5.0,
             resolution: tuple = (12, 12), M: int = 8,
             refine_iters: int = 12, tol: float = 1e-8):
    """Scan the double-disk separation for a vanishing-width lattice resonance.

    For each separation the infinite-array pole is located on the flipped
    sheet of the open channel; the separation minimizing Gamma is refined
    by golden-section. Returns (h_best, PoleRecord, scan_rows) where
    scan_rows collects (h, gamma, re k2). A monotone Gamma over the grid is
    reported through an empty refinement (no interior minimum).
    """
    h_grid = np.asarray(sorted(h_grid), dtype=float)

    def pole_at(h: float, seed: complex) -> PoleRecord:
        spec = make_double_disk(h, radius, contrast)
        nz = max(4, int(round(resolution[1] * (h + 2 * radius) / (2 * radius))))
        grid = build_cell(spec, (resolution[0], nz))
        ind = infinite_indicator(grid, kx, M=M)
        return find_pole(ind, seed, tol=tol)

    rows = []
    seed = complex(wave_seed_k2)
    for h in h_grid:
        rec = pole_at(h, seed)
        rows.append((float(h), rec.gamma, float(rec.k2.real)))
        seed = rec.k2
        logger.info("h=%.4f: gamma=%.3e re k2=%.6f", h, rec.gamma, rec.k2.real)

    gammas = np.array([r[1] for r in rows])
    i_min = int(np.argmin(gammas))
    if i_min == 0 or i_min == len(h_grid) - 1:
        logger.warning("Gamma monotone over the separation grid: no interior minimum")
        rec = pole_at(h_grid[i_min], complex(rows[i_min][2], -rows[i_min][1]))
        return float(h_grid[i_min]), rec, rows

    # golden-section refinement on gamma(h)
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = h_grid[i_min - 1], h_grid[i_min + 1]
    seed = complex(rows[i_min][2], -rows[i_min][1])
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    rec_c = pole_at(c, seed)
    rec_d = pole_at(d, seed)
    for _ in range(refine_iters):
        if rec_c.gamma < rec_d.gamma:
            b, d, rec_d = d, c, rec_c
            c = b - invphi * (b - a)
            rec_c = pole_at(c, rec_d.k2)
        else:
            a, c, rec_c = c, d, rec_d
            d = a + invphi * (b - a)
            rec_d = pole_at(d, rec_c.k2)
    best = rec_c if rec_c.gamma < rec_d.gamma else rec_d
    h_best = c if rec_c.gamma < rec_d.gamma else d
    rows.append((float(h_best), best.gamma, float(best.k2.real)))
    return float(h_best), best, rows


def _cyl_dispersion(k: complex, a: float, chi: float, n: int) -> complex:
    """Penetrable-cylinder resonance condition for angular order n."""
    root = np.sqrt(1.0 + chi)
    p = k * a
    q = root * k * a
    jn = _jv_c(n, q)
    jnp = 0.5 * (_jv_c(n - 1, q) - _jv_c(n + 1, q))
    hn = _hv_c(n, p)
    hnp = 0.5 * (_hv_c(n - 1, p) - _hv_c(n + 1, p))
    return root * jnp * hn - jn * hnp


def _jv_c(n: int, z: complex) -> complex:
    from scipy.special import jv
    return complex(jv(n, z))


def _hv_c(n: int, z: complex) -> complex:
    from scipy.special import hankel1
    return complex(hankel1(n, z))


def cylinder_pole_oracle(radius: float, contrast: float, n: int,
                         seed: complex, tol: float = 1e-12) -> complex:
    """Complex k root of the penetrable-cylinder dispersion relation.

    An independent desk oracle for the volume-operator pole finder at
    half-width zero; built purely from Bessel and Hankel evaluations.
    """
    if contrast <= -1:
        raise ValueError("contrast must exceed -1")
    root, fval, _ = muller(
        lambda k: _cyl_dispersion(k, radius, contrast, n), seed, tol=1e-13,
        maxiter=80,
    )
    if abs(_cyl_dispersion(root, radius, contrast, n)) > tol:
        raise RuntimeError("dispersion root did not reach tolerance")
    return complex(root)
