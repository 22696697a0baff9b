"""Infinite-array (Bloch) problem, diffraction channels, and the lattice
momentum-space operator.

The quasi-periodic Green's function enforcing E(x+1, z) = e^{i kx} E(x, z)
is evaluated through its spectral representation

    G_qp(d) = 2 pi i sum_m exp(i alpha_m dx + i beta_m |dz|) / beta_m,
    alpha_m = kx + 2 pi m,  beta_m = sqrt(k^2 - alpha_m^2),

with a two-term Kummer acceleration: the slowly converging tail is summed
in closed form through polylogarithms, which makes the series usable for
any |dz| (including 0, where only the free-space log singularity remains)
and for complex k on either sheet. Channel square roots are classified at
Re k so that both sheets continue analytically off the real axis.

The momentum-space operator maps a spectral density F to

    Omega[F](K) = (k^2/2) sum_m int Q(2 pi m, K_z - t)
                  Ghat(K_x - 2 pi m, t) F(K_x - 2 pi m, t) dt,

with Ghat(K) = 2/(|K|^2 - k^2 - i0); the two real poles per open-type
channel are handled by subtracting a linear interpolant with the exact
outgoing log integral added back. A dense discretization of (1 - Omega)
on the coupled fiber set {K_x - 2 pi m} provides the resolvent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from scipy.special import zeta

from .numerics import polylog2, polylog3, self_cell_weight
from .scatterer import CellGrid, ScattererSpec, q_transform
from .finite_solver import WaveParams

__all__ = [
    "ChannelSet",
    "channels",
    "qp_green",
    "qp_green_reg0",
    "BlochSolution",
    "assemble_bloch",
    "solve_bloch",
    "bloch_field_eval",
    "t_inf_reference",
    "channel_amplitudes",
    "channel_efficiencies",
    "omega_inf_apply",
    "OmegaResolvent",
]

logger = logging.getLogger(__name__)

_EULER_GAMMA = 0.5772156649015328606
_GRAZING_TOL = 1e-8


@dataclass(frozen=True)
class ChannelSet:
    """Diffraction channels alpha_m = kx + 2 pi m, beta_m = sqrt(k^2 - alpha_m^2).

    beta uses the physical-sheet continuation: open-type channels
    (|alpha| < Re k) take the principal sqrt(k^2 - alpha^2), closed-type
    ones i sqrt(alpha^2 - k^2), so each entry is analytic in k near the
    real axis. Setting sheet_flags[m] negates beta_m, which is how the
    unphysical sheet carrying resonance poles is reached.
    """

    m_range: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    open_flags: np.ndarray
    sheet_flags: np.ndarray

    @property
    def grazing_flags(self) -> np.ndarray:
        scale = max(float(np.max(np.abs(self.beta))), 1.0)
        return np.abs(self.beta) < _GRAZING_TOL * scale

    def with_flips(self, flip_ms) -> "ChannelSet":
        """Copy with the sheet flag toggled on the given m values."""
        flags = self.sheet_flags.copy()
        for mf in np.atleast_1d(flip_ms):
            idx = np.nonzero(self.m_range == mf)[0]
            if len(idx) == 0:
                raise ValueError(f"channel m={mf} outside truncation")
            flags[idx] = ~flags[idx]
        beta = np.where(flags != self.sheet_flags, -self.beta, self.beta)
        return ChannelSet(self.m_range, self.alpha, beta, self.open_flags, flags)


def _channel_betas(k: complex, alpha: np.ndarray) -> np.ndarray:
    open_type = np.abs(alpha) < np.real(k)
    with np.errstate(invalid="ignore"):
        b_open = np.sqrt(complex(k) ** 2 - alpha**2 + 0j)
        b_closed = 1j * np.sqrt(alpha**2 - complex(k) ** 2 + 0j)
    return np.where(open_type, b_open, b_closed)


def channels(wave: WaveParams, M: int) -> ChannelSet:
    """Channel set m = -M..M on the physical sheet."""
    if M < 1:
        raise ValueError("M must be at least 1")
    m = np.arange(-M, M + 1)
    alpha = wave.kx_inc + 2.0 * np.pi * m
    beta = _channel_betas(wave.k, alpha)
    open_flags = np.abs(alpha) < np.real(wave.k)
    return ChannelSet(m, alpha, beta, open_flags, np.zeros(len(m), dtype=bool))


# ---------------------------------------------------------------------------
# quasi-periodic Green's function
# ---------------------------------------------------------------------------

def _qp_tail(u, k, kx_signed, zt, M0):
    """Closed-form tail sum_{m > M0} 2 pi e^{alpha u} [1/a + c2/a^2 + c3/a^3]."""
    z = np.exp(2.0 * np.pi * u)
    mm = np.arange(1, M0 + 1)
    zp = z[..., None] ** mm
    P1 = np.sum(zp / mm, axis=-1)
    P2 = np.sum(zp / mm**2, axis=-1)
    P3 = np.sum(zp / mm**3, axis=-1)
    L1 = (-np.log(1.0 - z) - P1) / (2.0 * np.pi)
    L2 = (polylog2(z) - P2) / (2.0 * np.pi) ** 2
    L3 = (polylog3(z) - P3) / (2.0 * np.pi) ** 3
    c2 = zt * k**2 / 2.0
    c3 = zt**2 * k**4 / 8.0 + k**2 / 2.0
    S1 = L1 - kx_signed * L2 + kx_signed**2 * L3
    S2 = L2 - 2.0 * kx_signed * L3
    S3 = L3
    return 2.0 * np.pi * np.exp(kx_signed * u) * (S1 + c2 * S2 + c3 * S3)


def _qp_delta(dx, dz, wave: WaveParams, chan: ChannelSet | None = None,
              M0: int = 128) -> np.ndarray:
    """G_qp at separation arrays (dx, dz); sheet flips from chan apply."""
    dx = np.atleast_1d(np.asarray(dx, dtype=float))
    dz = np.atleast_1d(np.asarray(dz, dtype=float))
    zt = np.abs(dz)
    k = complex(wave.k)
    kx = wave.kx_inc
    m = np.arange(-M0, M0 + 1)
    alpha = kx + 2.0 * np.pi * m
    beta = _channel_betas(k, alpha)
    if chan is not None and np.any(chan.sheet_flags):
        for mf in chan.m_range[chan.sheet_flags]:
            beta = np.where(m == mf, -beta, beta)
    ph = np.exp(1j * np.multiply.outer(dx, alpha) + 1j * np.multiply.outer(zt, beta))
    exact = 2j * np.pi * (ph / beta).sum(axis=-1)
    tail = _qp_tail(1j * dx - zt, k, +kx, zt, M0) + _qp_tail(-1j * dx - zt, k, -kx, zt, M0)
    return exact + tail


def qp_green(r, rp, wave: WaveParams, chan: ChannelSet | None = None,
             tol: float = 1e-10, M0: int = 128):
    """Quasi-periodic Green's function G_qp(r | r'), period 1 along x.

    Equals the lattice sum of i pi H0(k |r - r' - n xhat|) e^{i kx n}.
    Raises on coincident points modulo the lattice and near grazing
    (Wood-anomaly) channels where a beta_m vanishes.
    """
    r = np.asarray(r, dtype=float)
    rp = np.asarray(rp, dtype=float)
    dx = np.atleast_1d(r[..., 0] - rp[..., 0])
    dz = np.atleast_1d(r[..., 1] - rp[..., 1])
    near = (np.abs(dx - np.round(dx)) < 1e-13) & (np.abs(dz) < 1e-13)
    if np.any(near):
        raise ValueError("source and target coincide modulo the lattice")
    _check_grazing(wave, M0)
    out = _qp_delta(dx, dz, wave, chan, M0=M0)
    return complex(out[0]) if out.shape == (1,) and np.asarray(r).ndim == 1 else out


def _check_grazing(wave: WaveParams, M0: int):
    m = np.arange(-M0, M0 + 1)
    alpha = wave.kx_inc + 2.0 * np.pi * m
    beta = _channel_betas(complex(wave.k), alpha)
    scale = max(abs(complex(wave.k)), 1.0)
    if np.any(np.abs(beta) < _GRAZING_TOL * scale):
        raise ValueError(
            "grazing diffraction channel (Wood anomaly): some beta_m ~ 0; "
            "perturb k or kx"
        )


def qp_green_reg0(wave: WaveParams, chan: ChannelSet | None = None,
                  M0: int = 128) -> complex:
    """Regular part lim_{d -> 0} [G_qp(d) - i pi H0(k |d|)].

    The log singularities cancel; the finite remainder combines the exact
    channel block, the tail sums at coincidence, and the constant
    2 ln(k/(4 pi)) + 2 gamma - i pi from matching the two logarithms.
    """
    k = complex(wave.k)
    kx = wave.kx_inc
    _check_grazing(wave, M0)
    m = np.arange(-M0, M0 + 1)
    alpha = kx + 2.0 * np.pi * m
    beta = _channel_betas(k, alpha)
    if chan is not None and np.any(chan.sheet_flags):
        for mf in chan.m_range[chan.sheet_flags]:
            beta = np.where(m == mf, -beta, beta)
    exact = 2j * np.pi * np.sum(1.0 / beta)
    mm = np.arange(1, M0 + 1)
    P1 = np.sum(1.0 / mm)
    P2 = np.sum(1.0 / mm**2)
    P3 = np.sum(1.0 / mm**3)
    L2 = (float(zeta(2)) - P2) / (2.0 * np.pi) ** 2
    L3 = (float(zeta(3)) - P3) / (2.0 * np.pi) ** 3
    c3 = k**2 / 2.0
    tail = 0.0 + 0.0j
    for kxs in (+kx, -kx):
        S1 = -P1 / (2.0 * np.pi) - kxs * L2 + kxs**2 * L3
        tail += 2.0 * np.pi * (S1 + c3 * L3)
    const = 2.0 * np.log(k / (4.0 * np.pi)) + 2.0 * _EULER_GAMMA - 1j * np.pi
    return complex(exact + tail + const)


# ---------------------------------------------------------------------------
# one-cell Bloch solve
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BlochSolution:
    """Field of the infinite array on one cell, plus channel structure."""

    grid: CellGrid
    wave: WaveParams
    channels: ChannelSet
    e_values: np.ndarray
    residual: float
    solver_info: dict = field(default_factory=dict)

    def t_sum(self, Kx, Kz):
        """(1/2pi) sum v w e exp(-i K.r) over the single cell."""
        act = self.grid.active
        r = self.grid.nodes[act]
        c = self.grid.v_quad[act] * self.grid.weights[act] * self.e_values[act]
        Kx = np.asarray(Kx, dtype=complex)
        Kz = np.asarray(Kz, dtype=complex)
        ph = np.exp(-1j * (np.multiply.outer(Kx, r[:, 0]) + np.multiply.outer(Kz, r[:, 1])))
        out = ph @ c / (2.0 * np.pi)
        return complex(out) if out.shape == () else out


def _pair_green_matrix(grid: CellGrid, wave: WaveParams, chan: ChannelSet | None,
                       M0: int) -> np.ndarray:
    """G_qp at all active node pairs, deduplicated over the difference lattice."""
    base = grid.base_cell()
    act = base.active
    nx, nz = base.resolution
    ix = act % nx
    iz = act // nx
    # differences live on the pixel lattice: tabulate once, then gather
    dix = ix[:, None] - ix[None, :]
    diz = iz[:, None] - iz[None, :]
    xs = np.unique(base.nodes[:, 0])
    zs = np.unique(base.nodes[:, 1])
    hx = xs[1] - xs[0]
    hz = zs[1] - zs[0]
    dd_x = hx * (np.arange(2 * nx - 1) - (nx - 1))
    dd_z = hz * (np.arange(2 * nz - 1) - (nz - 1))
    DX, DZ = np.meshgrid(dd_x, dd_z, indexing="ij")
    with np.errstate(divide="ignore", invalid="ignore"):
        table = _qp_delta(DX.ravel(), DZ.ravel(), wave, chan, M0=M0).reshape(DX.shape)
    table[nx - 1, nz - 1] = 0.0  # coincident separation, replaced by the diagonal rule
    return table[dix + nx - 1, diz + nz - 1]


def assemble_bloch(grid: CellGrid, wave: WaveParams, chan: ChannelSet | None = None,
                   M0: int = 128) -> np.ndarray:
    """(I - A_qp) over the active nodes of one cell.

    Off the diagonal A uses G_qp; the diagonal combines the equal-area-disk
    free-space integral with the pixel-area weighted regular lattice part.
    """
    base = grid.base_cell()
    act = base.active
    if len(act) == 0:
        return np.eye(0, dtype=complex)
    k = complex(wave.k)
    G = _pair_green_matrix(grid, wave, chan, M0)
    np.fill_diagonal(G, 0.0)
    coldens = base.v_quad[act] * base.weights[act]
    A = (k * k / (4.0 * np.pi)) * G * coldens[None, :]
    reg0 = qp_green_reg0(wave, chan, M0=M0)
    w0 = float(base.weights[act][0])  # uniform pixels
    selfw = self_cell_weight(k, w0)
    diag = (k * k / (4.0 * np.pi)) * base.v_quad[act] * (selfw + w0 * reg0)
    A[np.diag_indices_from(A)] = diag
    return np.eye(len(act), dtype=complex) - A


def solve_bloch(grid: CellGrid, wave: WaveParams, M: int = 8,
                chan: ChannelSet | None = None, M0: int = 128) -> BlochSolution:
    """Solve the one-cell quasi-periodic scattering problem (dense).

    Reports a smallest-singular-value estimate when the system is close to
    singular (an infinite-array resonance at this k).
    """
    if chan is None:
        chan = channels(wave, M)
    base = grid.base_cell()
    act = base.active
    e_all = np.array(wave.incident(base.nodes), dtype=complex)
    if len(act) == 0 or np.all(base.v_quad == 0):
        return BlochSolution(base, wave, chan, e_all, 0.0, {"method": "trivial"})
    Mmat = assemble_bloch(base, wave, chan, M0=M0)
    b = np.asarray(wave.incident(base.nodes[act]), dtype=complex)
    lu, piv = scipy.linalg.lu_factor(Mmat)
    e_act = scipy.linalg.lu_solve((lu, piv), b)
    res = float(np.linalg.norm(Mmat @ e_act - b) / np.linalg.norm(b))
    info = {"method": "dense", "unknowns": len(act)}
    if res > 1e-8:
        # crude sigma_min estimate by one inverse power step
        rng = np.random.default_rng(42)
        v = rng.standard_normal(len(act)) + 1j * rng.standard_normal(len(act))
        w = scipy.linalg.lu_solve((lu, piv), v / np.linalg.norm(v))
        info["sigma_min_estimate"] = float(1.0 / np.linalg.norm(w))
        logger.warning("Bloch system nearly singular: residual %.2e", res)
    # fill the inactive nodes by the representation formula
    inact = np.setdiff1d(np.arange(len(base.nodes)), act)
    if len(inact):
        k = complex(wave.k)
        Gfull = _pair_green_matrix_points(base, base.nodes[inact], wave, chan, M0)
        e_all[inact] += (k * k / (4.0 * np.pi)) * (
            Gfull @ (base.v_quad[act] * base.weights[act] * e_act)
        )
    e_all[act] = e_act
    return BlochSolution(base, wave, chan, e_all, res, info)


def _pair_green_matrix_points(grid: CellGrid, points: np.ndarray, wave: WaveParams,
                              chan: ChannelSet | None, M0: int) -> np.ndarray:
    """G_qp between arbitrary points (rows) and active nodes (columns)."""
    base = grid.base_cell()
    act = base.active
    src = base.nodes[act]
    dx = points[:, 0][:, None] - src[:, 0][None, :]
    dz = points[:, 1][:, None] - src[:, 1][None, :]
    return _qp_delta(dx.ravel(), dz.ravel(), wave, chan, M0=M0).reshape(dx.shape)


def bloch_field_eval(sol: BlochSolution, points) -> np.ndarray:
    """Field anywhere from the one-cell density (quasi-periodic by construction)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    act = sol.grid.active
    c = sol.grid.v_quad[act] * sol.grid.weights[act] * sol.e_values[act]
    G = _pair_green_matrix_points(sol.grid, pts, sol.wave, sol.channels, 128)
    k = complex(sol.wave.k)
    out = np.array(sol.wave.incident(pts), dtype=complex)
    out += (k * k / (4.0 * np.pi)) * (G @ c)
    return out if np.asarray(points).ndim > 1 else complex(out[0])


def t_inf_reference(sol: BlochSolution, K) -> complex | np.ndarray:
    """Smooth factor (1/2pi) int V0 E e^{-i K.r} of the infinite-array T-matrix."""
    return sol.t_sum(K[0], K[1])


def channel_amplitudes(sol: BlochSolution):
    """Outgoing plane-wave amplitudes per channel.

    For z -> +inf the scattered field tends to
    sum_m t_m^+ exp(i alpha_m x + i beta_m z) with
    t_m^+ = (i pi k^2 / beta_m) T0(alpha_m, beta_m), and t_m^- likewise
    with -beta_m for z -> -inf; T0 is the one-cell spectral density.
    Transmission tau_m adds the incident delta_{m0}.
    """
    ch = sol.channels
    k = complex(sol.wave.k)
    t_up = np.array(
        [1j * np.pi * k * k / b * sol.t_sum(a, b) for a, b in zip(ch.alpha, ch.beta)]
    )
    t_dn = np.array(
        [1j * np.pi * k * k / b * sol.t_sum(a, -b) for a, b in zip(ch.alpha, ch.beta)]
    )
    tau = t_up.copy()
    tau[ch.m_range == 0] += 1.0
    return tau, t_dn


def channel_efficiencies(sol: BlochSolution):
    """(transmitted, reflected) efficiencies of the open channels; they sum
    to 1 for real contrast and real k."""
    ch = sol.channels
    tau, rho = channel_amplitudes(sol)
    kz = complex(sol.wave.kz_inc).real
    op = ch.open_flags
    bt = np.real(ch.beta[op])
    return (
        bt * np.abs(tau[op]) ** 2 / kz,
        bt * np.abs(rho[op]) ** 2 / kz,
    )


# ---------------------------------------------------------------------------
# momentum-space lattice operator and its resolvent
# ---------------------------------------------------------------------------

def _pole_log_factor(T: float, beta: complex) -> complex:
    """int_{-T}^{T} dt / (t^2 - beta^2 - i0) = (1/beta)[log((T-b)/(T+b)) + i pi]."""
    return (np.log((T - beta) / (T + beta)) + 1j * np.pi) / beta


def omega_inf_apply(f_fiber, spec: ScattererSpec, K, wave: WaveParams,
                    chan: ChannelSet, tol: float = 1e-8, dt: float = 0.05,
                    t_pad: float = 40.0):
    """Apply the infinite-array momentum operator to a spectral density.

    Parameters
    ----------
    f_fiber : callable(xi: float, t: ndarray) -> ndarray
        Evaluates the density F(xi, t) along one fiber.
    K : (K_x, K_z) real evaluation point.

    Returns
    -------
    value : complex
    tail : float
        Estimated truncation remainder (channel and t-interval tails);
        raises if it exceeds tol.
    """
    Kx, Kz = float(K[0]), float(K[1])
    k = complex(wave.k)
    total = 0.0 + 0.0j
    tail_est = 0.0
    edge = []
    T = abs(Kz) + t_pad
    n = int(2 * T / dt) | 1
    t = np.linspace(-T, T, n)
    for m in chan.m_range:
        xi = Kx - 2.0 * np.pi * m
        b2 = k * k - xi * xi
        qm = q_transform(spec, (2.0 * np.pi * m, Kz - t))
        fm = f_fiber(xi, t)
        g = qm * fm
        if np.real(b2) > 0 and abs(np.imag(b2)) < 1e-14:
            beta = np.sqrt(np.real(b2))
            if beta < _GRAZING_TOL * max(abs(k), 1.0) or beta > T - 2 * dt:
                raise ValueError(f"channel xi={xi:.4f} at threshold or beyond grid")
            gp = complex(q_transform(spec, (2.0 * np.pi * m, Kz - beta)) * f_fiber(xi, np.array([beta]))[0])
            gm_ = complex(q_transform(spec, (2.0 * np.pi * m, Kz + beta)) * f_fiber(xi, np.array([-beta]))[0])
            p = (gp * (t + beta) + gm_ * (beta - t)) / (2.0 * beta)
            smooth = (g - p) * 2.0 / (t * t - beta * beta)
            Im = np.trapezoid(smooth, t) + (gp + gm_) * _pole_log_factor(T, beta)
        else:
            Im = np.trapezoid(g * 2.0 / (t * t - b2), t)
        total += Im
        if m == chan.m_range[0] or m == chan.m_range[-1]:
            edge.append(abs(Im))
        tail_est += float(abs(g[0]) + abs(g[-1])) * 2.0 / (T * T + abs(b2)) * T * 0.5
    # outermost channels bound the geometric channel tail
    tail_est += 2.0 * max(edge)
    value = (k * k / 2.0) * total
    tail_est = (abs(k) ** 2 / 2.0) * tail_est
    if tail_est > tol:
        raise ValueError(
            f"omega truncation estimate {tail_est:.2e} exceeds tol {tol:.2e}; "
            "raise t_pad or the channel truncation"
        )
    return value, tail_est


class OmegaResolvent:
    """Dense discretization of (1 - Omega) on the coupled fiber set of one K_x.

    Fibers xi_m = K_x - 2 pi m share a uniform t-grid on [-T, T]; open-type
    fibers additionally carry their two pole points +-beta_m as collocation
    unknowns so the pole subtraction uses exact on-grid values. twist=True
    builds the variant whose channel coupling carries (-1)^(m'-m), the
    conjugated operator that appears when an oscillating half-integer
    phase is factored out of the density.
    """

    def __init__(self, spec: ScattererSpec, wave: WaveParams, K_x: float,
                 n_channels: int = 5, T: float | None = None, dt: float = 0.15,
                 twist: bool = False):
        self.spec = spec
        self.wave = wave
        self.K_x = float(K_x)
        self.twist = bool(twist)
        k = complex(wave.k)
        if T is None:
            T = 6.0 * abs(k)
        self.T = float(T)
        m = np.arange(-n_channels, n_channels + 1)
        self.m_values = m
        self.xi = K_x - 2.0 * np.pi * m
        b2 = (k * k - self.xi**2)
        self.open_type = (np.real(b2) > 0) & (np.abs(np.imag(b2)) < 1e-14)
        self.beta = np.where(self.open_type, np.sqrt(np.abs(np.real(b2))), 0.0)
        n = int(2 * self.T / dt) | 1
        tgrid = np.linspace(-self.T, self.T, n)
        # keep uniform nodes clear of the poles
        for b in self.beta[self.open_type]:
            if np.min(np.abs(tgrid - b)) < 0.2 * dt or np.min(np.abs(tgrid + b)) < 0.2 * dt:
                tgrid = tgrid + 0.37 * dt
                break
        self.tgrid = tgrid
        self.fiber_nodes = []
        for i, mi in enumerate(m):
            if self.open_type[i]:
                if self.beta[i] < _GRAZING_TOL * max(abs(k), 1.0) or self.beta[i] > self.T - 2 * dt:
                    raise ValueError(f"fiber xi={self.xi[i]:.4f} at threshold or beyond grid")
                self.fiber_nodes.append(np.concatenate([tgrid, [self.beta[i], -self.beta[i]]]))
            else:
                self.fiber_nodes.append(tgrid)
        self.offsets = np.cumsum([0] + [len(fn) for fn in self.fiber_nodes])
        self.n_unknowns = self.offsets[-1]
        self._assemble()

    def _coupling_sign(self, dm: int) -> float:
        return (-1.0) ** (dm % 2) if self.twist else 1.0

    def _assemble(self):
        k = complex(self.wave.k)
        nuni = len(self.tgrid)
        w = np.full(nuni, self.tgrid[1] - self.tgrid[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        # Q on the difference lattice per channel offset
        A = np.eye(self.n_unknowns, dtype=complex)
        for jm, mj in enumerate(self.m_values):  # source fiber
            xi = self.xi[jm]
            b2 = k * k - xi * xi
            src_nodes = self.fiber_nodes[jm]
            ghat_uni = 2.0 / (self.tgrid**2 - b2)
            for im, mi in enumerate(self.m_values):  # target fiber
                dm = mj - mi
                sgn = self._coupling_sign(dm)
                tgt_nodes = self.fiber_nodes[im]
                Qblk = q_transform(
                    self.spec,
                    (2.0 * np.pi * dm, tgt_nodes[:, None] - self.tgrid[None, :]),
                )
                col0 = self.offsets[jm]
                row0 = self.offsets[im]
                rows = slice(row0, row0 + len(tgt_nodes))
                block = -(k * k / 2.0) * sgn * Qblk * (w * ghat_uni)[None, :]
                if self.open_type[jm]:
                    b = self.beta[jm]
                    Qp = q_transform(self.spec, (2.0 * np.pi * dm, tgt_nodes - b))
                    Qm = q_transform(self.spec, (2.0 * np.pi * dm, tgt_nodes + b))
                    # subtract the linear interpolant through the poles
                    coef_p = (self.tgrid + b) / (2.0 * b)
                    coef_m = (b - self.tgrid) / (2.0 * b)
                    sub = (w * ghat_uni)
                    corr_p = -np.sum(sub * coef_p) * Qp
                    corr_m = -np.sum(sub * coef_m) * Qm
                    logfac = _pole_log_factor(self.T, b)
                    colp = col0 + nuni
                    colm = col0 + nuni + 1
                    A[rows, col0 : col0 + nuni] += block
                    A[rows, colp] += -(k * k / 2.0) * sgn * (corr_p + Qp * logfac)
                    A[rows, colm] += -(k * k / 2.0) * sgn * (corr_m + Qm * logfac)
                else:
                    A[rows, col0 : col0 + nuni] += block
        self._lu = scipy.linalg.lu_factor(A)
        self.cond_estimate = None

    def rhs_from_callable(self, f_fiber) -> np.ndarray:
        out = np.empty(self.n_unknowns, dtype=complex)
        for i in range(len(self.m_values)):
            out[self.offsets[i] : self.offsets[i + 1]] = f_fiber(
                self.xi[i], self.fiber_nodes[i]
            )
        return out

    def solve(self, F: np.ndarray) -> np.ndarray:
        if F.shape != (self.n_unknowns,):
            raise ValueError("rhs length mismatch")
        return scipy.linalg.lu_solve(self._lu, F)

    def fiber_values(self, G: np.ndarray, i_fiber: int) -> tuple[np.ndarray, np.ndarray]:
        """(nodes, values) of fiber i from a stacked solution vector."""
        return self.fiber_nodes[i_fiber], G[self.offsets[i_fiber] : self.offsets[i_fiber + 1]]

    def sigma_min_estimate(self, iters: int = 4) -> float:
        rng = np.random.default_rng(11)
        v = rng.standard_normal(self.n_unknowns) + 1j * rng.standard_normal(self.n_unknowns)
        v /= np.linalg.norm(v)
        s = 1.0
        for _ in range(iters):
            w = scipy.linalg.lu_solve(self._lu, v)
            s = 1.0 / np.linalg.norm(w)
            v = w * s
        return float(s)
