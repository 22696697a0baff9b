"""Scattering by finite and infinite periodic arrays of 2D scatterers.

Volume integral equation solvers for the truncated and fully periodic
array, the spectral (T-matrix) split of the finite-array response into
oscillation-carrying and converging parts, and resonance-pole tracking in
the complex k^2 plane, including vanishing-width lattice resonances of
double arrays and their finite-size broadening.
"""

__version__ = "0.1.0"

from .scatterer import Shape, ScattererSpec, CellGrid, build_cell, v_eval, q_transform
from .finite_solver import (
    WaveParams,
    FieldSolution,
    solve_finite,
    field_eval,
    far_field,
)
from .bloch import ChannelSet, channels, qp_green, solve_bloch, t_inf_reference
from .decomposition import TEvaluator, t_eval, build_split, field_split
from .poles import PoleRecord, SweepResult, find_pole, sweep_N, bic_scan

__all__ = [
    "__version__",
    "Shape", "ScattererSpec", "CellGrid", "build_cell", "v_eval", "q_transform",
    "WaveParams", "FieldSolution", "solve_finite", "field_eval", "far_field",
    "ChannelSet", "channels", "qp_green", "solve_bloch", "t_inf_reference",
    "TEvaluator", "t_eval", "build_split", "field_split",
    "PoleRecord", "SweepResult", "find_pole", "sweep_N", "bic_scan",
]
