import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latscat.scatterer import (
    Shape,
    ScattererSpec,
    build_cell,
    q_transform,
    q_transform_grid,
    v_eval,
)
from helpers import q_oracle_polar_disk


def test_disk_cell_area_midpoint():
    spec = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])
    g = build_cell(spec, (16, 16))
    area = np.sum(g.weights[g.v_values != 0]).real
    assert abs(area - np.pi * 0.0625) / (np.pi * 0.0625) < 0.05


def test_disk_cell_area_overlap_exact():
    spec = ScattererSpec([Shape("disk", (0.1, -0.2), 0.23, 2.0)])
    g = build_cell(spec, (16, 16))
    area = np.sum(g.weights * g.v_quad).real / 2.0
    assert abs(area - np.pi * 0.23**2) < 1e-12


def test_empty_cell():
    g = build_cell(ScattererSpec([]), (8, 8))
    assert np.all(g.v_values == 0)
    assert np.all(g.v_quad == 0)


def test_double_blob_cell():
    spec = ScattererSpec(
        [Shape("disk", (0.0, 0.5), 0.2, 1.0), Shape("disk", (0.0, -0.5), 0.2, 1.0)]
    )
    g = build_cell(spec, (12, 12))
    nz = g.nodes[g.v_values != 0]
    assert np.all(np.abs(nz[:, 1]) > 0.2)  # two blobs, nothing near z = 0
    assert len(nz) > 0


def test_strip_violation_rejected():
    with pytest.raises(ValueError, match="strip"):
        ScattererSpec([Shape("disk", (0.4, 0.0), 0.2, 1.0)])


def test_overlap_rejected_unless_additive():
    shapes = [Shape("disk", (0.0, 0.0), 0.2, 1.0), Shape("disk", (0.1, 0.0), 0.2, 1.0)]
    with pytest.raises(ValueError, match="overlap"):
        ScattererSpec(shapes)
    spec = ScattererSpec(shapes, additive=True)
    assert v_eval(spec, (0.05, 0.0)) == 2.0


def test_v_eval_examples():
    disk = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 2.0)])
    assert v_eval(disk, (0.0, 0.0)) == 2.0
    assert v_eval(disk, (0.3, 0.0)) == 0.0
    rect = ScattererSpec([Shape("rectangle", (0.0, 0.0), (0.4, 0.2), 1 + 0.5j)])
    assert v_eval(rect, (0.2, 0.1)) == 1 + 0.5j  # corner counts as inside


def test_q_zero_momentum_values():
    disk = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])
    assert abs(q_transform(disk, (0.0, 0.0)) - 0.03125) < 1e-14
    rect = ScattererSpec([Shape("rectangle", (0.0, 0.0), (0.4, 0.2), 1.0)])
    assert abs(q_transform(rect, (0.0, 0.0)) - 0.08 / (2 * np.pi)) < 1e-14


def test_q_complex_matches_quadrature():
    disk = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])
    K = (3 + 2j, 1.0)
    oracle = q_oracle_polar_disk((0.0, 0.0), 0.25, 1.0, K)
    assert abs(q_transform(disk, K) - oracle) < 1e-8


def test_q_brute_force_random_complex(rng):
    shapes = [Shape("disk", (0.1, -0.3), 0.2, 1.3)]
    spec = ScattererSpec(shapes)
    for _ in range(20):
        K = (
            rng.uniform(-4, 4) + 1j * rng.uniform(-5, 5),
            rng.uniform(-4, 4) + 1j * rng.uniform(-5, 5),
        )
        oracle = q_oracle_polar_disk((0.1, -0.3), 0.2, 1.3, K)
        val = q_transform(spec, K)
        assert abs(val - oracle) <= 1e-8 * max(abs(oracle), 1.0)


def test_q_conjugate_symmetry(rng):
    spec = ScattererSpec(
        [Shape("disk", (0.05, 0.2), 0.2, 2.0),
         Shape("rectangle", (-0.2, -0.4), (0.3, 0.25), 0.7)]
    )
    for _ in range(20):
        K = (rng.uniform(-4, 4) + 1j * rng.uniform(-3, 3),
             rng.uniform(-4, 4) + 1j * rng.uniform(-3, 3))
        lhs = q_transform(spec, (-np.conj(K[0]), -np.conj(K[1])))
        rhs = np.conj(q_transform(spec, K))
        assert abs(lhs - rhs) < 1e-12 * max(1.0, abs(rhs))


@settings(max_examples=25, deadline=None)
@given(d=st.floats(-2.0, 2.0), kx=st.floats(-3.0, 3.0), kz=st.floats(-3.0, 3.0))
def test_q_translation_covariance(d, kx, kz):
    base = [Shape("disk", (0.1, 0.0), 0.2, 1.0)]
    shifted = [Shape("disk", (0.1, d), 0.2, 1.0)]
    q0 = q_transform(ScattererSpec(base), (kx, kz))
    q1 = q_transform(ScattererSpec(shifted), (kx, kz))
    assert abs(q1 - q0 * np.exp(-1j * kz * d)) < 1e-13


def test_grid_translation_structure():
    spec = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])
    g = build_cell(spec, (8, 8)).replicate(2)
    npc = g.n_per_cell
    cells = g.cell_indices
    for i, c in enumerate(cells):
        blk = g.nodes[i * npc : (i + 1) * npc]
        assert np.allclose(blk - np.array([c, 0.0]), g.base_cell().nodes)


def test_q_grid_converges_to_formula():
    spec = ScattererSpec([Shape("disk", (0.0, 0.0), 0.25, 1.0)])
    K = (2.0, 1.0)
    errs = []
    for r in (16, 32, 64):
        g = build_cell(spec, (r, r))
        errs.append(abs(q_transform_grid(g, K) - q_transform(spec, K)))
    assert errs[0] > errs[1] > errs[2]
