import time

import numpy as np
import pytest

from latscat.scatterer import Shape, ScattererSpec, build_cell
from latscat.finite_solver import (
    SolveError,
    ToeplitzScatterOperator,
    WaveParams,
    apply_forward,
    assemble_dense,
    extinction,
    far_field,
    field_eval,
    scattered_power,
    solve_finite,
)
from helpers import cylinder_field


def test_zero_contrast_matrix(wave):
    g = build_cell(ScattererSpec([]), (8, 8))
    A = assemble_dense(g, wave, 1)
    assert np.all(A == 0)


def test_block_toeplitz_structure(disk_spec, wave):
    g = build_cell(disk_spec, (8, 8))
    A = assemble_dense(g, wave, 1)
    na = len(g.active)
    # block (m, n) depends only on m - n
    A00 = A[na : 2 * na, na : 2 * na]
    A11 = A[2 * na :, 2 * na :]
    A01 = A[:na, na : 2 * na]
    A12 = A[na : 2 * na, 2 * na :]
    assert np.allclose(A00, A11, atol=1e-15)
    assert np.allclose(A01, A12, atol=1e-15)


def test_dense_vs_matrix_free(disk_spec, wave, rng):
    g = build_cell(disk_spec, (8, 8))
    A = assemble_dense(g, wave, 2)
    op = ToeplitzScatterOperator(g, wave, 2)
    x = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    ref = x - A @ x
    val = apply_forward(g, wave, 2, x)
    assert np.linalg.norm(val - ref) / np.linalg.norm(ref) < 1e-12


def test_apply_forward_identity_on_zero_contrast(wave, rng):
    g = build_cell(ScattererSpec([]), (8, 8))
    sol = solve_finite(g, wave, 1)
    assert sol.residual == 0.0


def test_apply_forward_length_check(disk_spec, wave):
    g = build_cell(disk_spec, (8, 8))
    op = ToeplitzScatterOperator(g, wave, 1)
    with pytest.raises(ValueError, match="length"):
        op.apply(np.zeros(op.n + 1, dtype=complex))


def test_matvec_scaling_in_cell_count(disk_spec, wave, rng):
    # cost per apply grows at most like C^1.2 over C in {8, 16, 32, 64} cells
    g = build_cell(disk_spec, (8, 8))
    times, counts = [], []
    for N in (4, 8, 16, 32):  # 2N+1 cells: 9, 17, 33, 65
        op = ToeplitzScatterOperator(g, wave, N)
        x = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
        op.apply(x)  # warm
        reps = 5
        t0 = time.perf_counter()
        for _ in range(reps):
            op.apply(x)
        times.append((time.perf_counter() - t0) / reps)
        counts.append(2 * N + 1)
    slope = np.polyfit(np.log(counts), np.log(times), 1)[0]
    assert slope <= 1.35, f"scaling exponent {slope:.2f}"


def test_zero_contrast_solution(wave):
    g = build_cell(ScattererSpec([]), (8, 8))
    sol = solve_finite(g, wave, 2)
    assert np.array_equal(sol.e_values, wave.incident(sol.grid.nodes))


def test_born_regime(wave):
    weak = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1e-3)])
    sol = solve_finite(build_cell(weak, (16, 16)), wave, 1)
    einc = wave.incident(sol.grid.nodes)
    rel = np.linalg.norm(sol.e_values - einc) / np.linalg.norm(einc)
    assert 1e-5 < rel < 5e-3  # scattered part is first order in the contrast


def test_krylov_matches_dense(disk_spec, wave):
    g = build_cell(disk_spec, (12, 12))
    sd = solve_finite(g, wave, 2, method="dense")
    sk = solve_finite(g, wave, 2, method="krylov", tol=1e-12)
    assert np.max(np.abs(sd.e_values - sk.e_values)) < 1e-8


def test_custom_rhs_roundtrip(disk_spec, wave, rng):
    g = build_cell(disk_spec, (8, 8))
    op = ToeplitzScatterOperator(g, wave, 1)
    x = rng.standard_normal(op.n) + 1j * rng.standard_normal(op.n)
    b = op.apply(x)
    sol = solve_finite(g, wave, 1, rhs=b, method="dense")
    assert np.max(np.abs(sol.e_values[sol.grid.active] - x)) < 1e-9


def test_cylinder_partial_wave_oracle():
    chi = 1.0
    spec = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, chi)])
    wave = WaveParams(3.0, 3.0)  # incidence along +x
    sol = solve_finite(build_cell(spec, (32, 32)), wave, 0)
    probes = np.array([[0.8, 0.3], [0.5, -0.6], [-0.7, 0.2], [0.0, 0.9]])
    num = field_eval(sol, probes)
    ana = cylinder_field(probes, 3.0, 0.25, chi)
    assert np.max(np.abs(num - ana)) / np.max(np.abs(ana)) < 1e-4


def test_field_eval_at_nodes(sol_N1):
    act = sol_N1.grid.active[::7]
    vals = field_eval(sol_N1, sol_N1.grid.nodes[act])
    assert np.max(np.abs(vals - sol_N1.e_values[act])) < 1e-8


def test_far_field_zero_contrast(wave):
    sol = solve_finite(build_cell(ScattererSpec([]), (8, 8)), wave, 1)
    assert np.all(far_field(sol, np.linspace(0, 2 * np.pi, 8)) == 0)


def test_far_field_matches_large_radius(disk_spec, wave):
    sol = solve_finite(build_cell(disk_spec, (24, 24)), wave, 1)
    th = np.array([0.3, 1.1, 2.0, 4.0])
    R = 400.0
    pts = R * np.column_stack([np.cos(th), np.sin(th)])
    k = float(np.real(wave.k))
    f_sampled = (field_eval(sol, pts) - wave.incident(pts)) * np.sqrt(R) / np.exp(1j * k * R)
    f_direct = far_field(sol, th)
    assert np.max(np.abs(f_sampled - f_direct) / np.abs(f_direct)) < 1e-2


def test_far_field_requires_real_k(disk_spec):
    g = build_cell(disk_spec, (8, 8))
    sol = solve_finite(g, WaveParams(3.0 - 0.1j), 0, method="dense")
    with pytest.raises(ValueError, match="real"):
        far_field(sol, 0.0)


def test_reciprocity(disk_spec):
    k = 3.0
    th_i, th_o = 0.3, 1.9
    g = build_cell(disk_spec, (16, 16))

    def amp(inc_angle, obs_angle):
        w = WaveParams(k, k * np.cos(inc_angle),
                       kz_sign=1 if np.sin(inc_angle) >= 0 else -1)
        sol = solve_finite(g, w, 1)
        return far_field(sol, obs_angle)

    f1 = amp(th_i, th_o)
    f2 = amp(np.pi + th_o, np.pi + th_i)
    assert abs(f1 - f2) < 1e-6 * max(abs(f1), 1e-3)


def test_flux_conservation(disk_spec, wave):
    sol = solve_finite(build_cell(disk_spec, (24, 24)), wave, 1)
    ps, ex = scattered_power(sol), extinction(sol)
    assert abs(ps - ex) / ex < 1e-4


def test_grid_self_convergence_order(disk_spec, wave):
    f_vals = []
    for r in (8, 16, 32):
        sol = solve_finite(build_cell(disk_spec, (r, r)), wave, 1)
        f_vals.append(far_field(sol, 0.0))
    d1 = abs(f_vals[1] - f_vals[0])
    d2 = abs(f_vals[2] - f_vals[1])
    assert d1 / d2 >= 3.0  # observed order >= log2(3) ~ 1.58
