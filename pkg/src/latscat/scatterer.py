"""Geometry and Fourier transform of the repeating scatterer cell.

The base potential lives in the unit-width strip |x| <= 1/2 of the x,z
plane and is a union of piecewise-constant primitives (disks and
axis-aligned rectangles), each carrying a real or complex contrast value.
Integer x-translates of this cell build the finite and infinite arrays
consumed by the solvers.

Two evaluation routes exist side by side:

* ``v_eval``          exact indicator-based point evaluation,
* ``q_transform``     closed-form Fourier transform (entire in both
                      spectral variables),

and ``build_cell`` discretizes the cell on a uniform pixel grid for the
Nystrom solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import j1, jv

__all__ = [
    "Shape",
    "ScattererSpec",
    "CellGrid",
    "build_cell",
    "v_eval",
    "q_transform",
    "q_transform_grid",
]

_STRIP_TOL = 1e-12


@dataclass(frozen=True)
class Shape:
    """One piecewise-constant primitive.

    kind is "disk" (size = radius) or "rectangle" (size = (width, height)).
    center is in dimensionless cell coordinates; contrast is the value of
    the potential inside the shape.
    """

    kind: str
    center: tuple[float, float]
    size: float | tuple[float, float]
    contrast: complex

    def __post_init__(self):
        if self.kind not in ("disk", "rectangle"):
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.kind == "disk":
            if not np.isscalar(self.size) or self.size <= 0:
                raise ValueError("disk needs a positive scalar radius")
        else:
            w, h = self.size
            if w <= 0 or h <= 0:
                raise ValueError("rectangle needs positive (width, height)")

    @property
    def x_extent(self) -> tuple[float, float]:
        x0 = self.center[0]
        half = self.size if self.kind == "disk" else 0.5 * self.size[0]
        return (x0 - half, x0 + half)

    @property
    def z_extent(self) -> tuple[float, float]:
        z0 = self.center[1]
        half = self.size if self.kind == "disk" else 0.5 * self.size[1]
        return (z0 - half, z0 + half)

    def contains(self, x, z):
        """Boundary-inclusive membership test, vectorized over x, z."""
        if self.kind == "disk":
            r2 = (x - self.center[0]) ** 2 + (z - self.center[1]) ** 2
            return r2 <= self.size**2 + _STRIP_TOL
        w, h = self.size
        return (np.abs(x - self.center[0]) <= 0.5 * w + _STRIP_TOL) & (
            np.abs(z - self.center[1]) <= 0.5 * h + _STRIP_TOL
        )


def _shapes_overlap(a: Shape, b: Shape) -> bool:
    if a.kind == "disk" and b.kind == "disk":
        d = math.hypot(a.center[0] - b.center[0], a.center[1] - b.center[1])
        return d < a.size + b.size - _STRIP_TOL
    if a.kind == "rectangle" and b.kind == "rectangle":
        ax, az = a.x_extent, a.z_extent
        bx, bz = b.x_extent, b.z_extent
        return (ax[0] < bx[1] and bx[0] < ax[1]) and (az[0] < bz[1] and bz[0] < az[1])
    disk, rect = (a, b) if a.kind == "disk" else (b, a)
    cx = min(max(disk.center[0], rect.x_extent[0]), rect.x_extent[1])
    cz = min(max(disk.center[1], rect.z_extent[0]), rect.z_extent[1])
    return math.hypot(disk.center[0] - cx, disk.center[1] - cz) < disk.size - _STRIP_TOL


@dataclass(frozen=True)
class ScattererSpec:
    """Base potential of one unit cell.

    The union of shape supports must fit inside the strip x in [-1/2, 1/2];
    overlapping shapes are rejected unless ``additive`` is set, in which
    case contrasts add where shapes intersect. Immutable after creation.
    """

    shapes: tuple[Shape, ...]
    additive: bool = False

    def __init__(self, shapes: Sequence[Shape], additive: bool = False):
        object.__setattr__(self, "shapes", tuple(shapes))
        object.__setattr__(self, "additive", bool(additive))
        for s in self.shapes:
            lo, hi = s.x_extent
            if lo < -0.5 - _STRIP_TOL or hi > 0.5 + _STRIP_TOL:
                raise ValueError(
                    f"shape support x in [{lo:.4f}, {hi:.4f}] leaves the strip [-1/2, 1/2]"
                )
        if not self.additive:
            for i in range(len(self.shapes)):
                for j in range(i + 1, len(self.shapes)):
                    if _shapes_overlap(self.shapes[i], self.shapes[j]):
                        raise ValueError(
                            f"shapes {i} and {j} overlap; set additive=True to allow"
                        )

    @property
    def empty(self) -> bool:
        return len(self.shapes) == 0

    def bounding_box(self) -> tuple[float, float, float, float]:
        """(x_lo, x_hi, z_lo, z_hi) of the union support; empty spec gets a token box."""
        if self.empty:
            return (-0.25, 0.25, -0.25, 0.25)
        xs = [s.x_extent for s in self.shapes]
        zs = [s.z_extent for s in self.shapes]
        return (
            min(x[0] for x in xs),
            max(x[1] for x in xs),
            min(z[0] for z in zs),
            max(z[1] for z in zs),
        )

    def x_margin(self) -> float:
        """Distance from the support to the strip edges (decay scale of contour tails)."""
        x_lo, x_hi, _, _ = self.bounding_box()
        return min(0.5 + x_lo, 0.5 - x_hi)


def v_eval(spec: ScattererSpec, point) -> complex:
    """Exact potential value at a point; boundary points count as inside."""
    x, z = point
    total = 0.0 + 0.0j
    for s in spec.shapes:
        if s.contains(x, z):
            total += s.contrast
            if not spec.additive:
                break
    return total


@dataclass(frozen=True)
class CellGrid:
    """Uniform pixel quadrature over the bounding box of one cell.

    nodes are pixel centers (n, 2); weights are the constant pixel area;
    v_values are midpoint samples of the potential; v_quad are the
    area-fraction weighted contrasts used by the solvers (exact pixel
    overlap per shape, which restores clean second-order convergence that
    plain midpoint staircasing would destroy). cell_index_range is (0, 0)
    for a single cell and (-N, N) after replication.
    """

    spec: ScattererSpec
    nodes: np.ndarray
    weights: np.ndarray
    v_values: np.ndarray
    v_quad: np.ndarray
    resolution: tuple[int, int]
    cell_index_range: tuple[int, int] = (0, 0)

    @property
    def n_cells(self) -> int:
        lo, hi = self.cell_index_range
        return hi - lo + 1

    @property
    def n_per_cell(self) -> int:
        return len(self.nodes) // self.n_cells

    @property
    def cell_indices(self) -> np.ndarray:
        lo, hi = self.cell_index_range
        return np.arange(lo, hi + 1)

    @property
    def active(self) -> np.ndarray:
        """Indices of nodes carrying nonzero quadrature density."""
        return np.nonzero(self.v_quad != 0)[0]

    def replicate(self, half_width: int) -> "CellGrid":
        """Tile the single cell over cells -half_width..half_width (cell-major order)."""
        if self.cell_index_range != (0, 0):
            raise ValueError("can only replicate a single-cell grid")
        n = int(half_width)
        cells = np.arange(-n, n + 1)
        nodes = np.concatenate(
            [self.nodes + np.array([c, 0.0]) for c in cells], axis=0
        )
        rep = lambda a: np.tile(a, len(cells))
        return CellGrid(
            spec=self.spec,
            nodes=nodes,
            weights=rep(self.weights),
            v_values=rep(self.v_values),
            v_quad=rep(self.v_quad),
            resolution=self.resolution,
            cell_index_range=(-n, n),
        )

    def base_cell(self) -> "CellGrid":
        """The single-cell grid this one replicates (identity for one cell)."""
        if self.cell_index_range == (0, 0):
            return self
        npc = self.n_per_cell
        lo, _ = self.cell_index_range
        i0 = (-lo) * npc
        return CellGrid(
            spec=self.spec,
            nodes=self.nodes[i0 : i0 + npc],
            weights=self.weights[i0 : i0 + npc],
            v_values=self.v_values[i0 : i0 + npc],
            v_quad=self.v_quad[i0 : i0 + npc],
            resolution=self.resolution,
        )


def _segment_integral(R: float, u0: float, u1: float) -> float:
    """Integral of sqrt(R^2 - u^2) over [u0, u1], clipped to [-R, R]."""
    u0 = min(max(u0, -R), R)
    u1 = min(max(u1, -R), R)
    if u1 <= u0:
        return 0.0
    F = lambda u: 0.5 * (u * math.sqrt(max(R * R - u * u, 0.0)) + R * R * math.asin(u / R))
    return F(u1) - F(u0)


def _disk_pixel_overlap(shape: Shape, x0, x1, z0, z1) -> float:
    """Exact area of disk-pixel intersection via column integration.

    The pixel z-interval clips the chord [zc - s(x), zc + s(x)] with
    s(x) = sqrt(R^2 - (x - xc)^2); splitting the x-range at the points
    where the chord endpoints cross z0, z1 leaves pieces with closed-form
    antiderivatives.
    """
    xc, zc = shape.center
    R = shape.size
    a, b = max(x0, xc - R), min(x1, xc + R)
    if b <= a:
        return 0.0
    lo, hi = z0 - zc, z1 - zc  # chord clip bounds relative to the center
    if lo >= R or hi <= -R:
        return 0.0

    # breakpoints where s(x) crosses |lo| or |hi|
    cuts = {a, b}
    for val in (abs(lo), abs(hi)):
        if val < R:
            d = math.sqrt(R * R - val * val)
            for xx in (xc - d, xc + d):
                if a < xx < b:
                    cuts.add(xx)
    xs = sorted(cuts)

    area = 0.0
    for xa, xb in zip(xs[:-1], xs[1:]):
        xm = 0.5 * (xa + xb)
        s = math.sqrt(max(R * R - (xm - xc) ** 2, 0.0))
        top_curved = s < hi  # top of the overlap is the circle, else the pixel edge
        bot_curved = -s > lo
        ua, ub = xa - xc, xb - xc
        seg = 0.0
        if top_curved:
            seg += _segment_integral(R, ua, ub)
        else:
            seg += hi * (xb - xa)
        if bot_curved:
            seg += _segment_integral(R, ua, ub)
        else:
            seg += -lo * (xb - xa)
        if seg > 0:
            area += seg
    return max(area, 0.0)


def _pixel_overlap_fraction(shape: Shape, x0, x1, z0, z1) -> float:
    pix = (x1 - x0) * (z1 - z0)
    if shape.kind == "rectangle":
        sx, sz = shape.x_extent, shape.z_extent
        dx = min(x1, sx[1]) - max(x0, sx[0])
        dz = min(z1, sz[1]) - max(z0, sz[0])
        return max(dx, 0.0) * max(dz, 0.0) / pix
    return _disk_pixel_overlap(shape, x0, x1, z0, z1) / pix


def build_cell(spec: ScattererSpec, resolution: tuple[int, int]) -> CellGrid:
    """Discretize the cell potential on a uniform (n_x, n_z) pixel grid.

    Parameters
    ----------
    spec : ScattererSpec
    resolution : (int, int)
        Pixels across the bounding box in x and z; both at least 4.

    Returns
    -------
    CellGrid
        Midpoint nodes with constant pixel-area weights. ``v_values`` holds
        center samples, ``v_quad`` overlap-fraction weighted contrasts.
    """
    nx, nz = int(resolution[0]), int(resolution[1])
    if nx < 4 or nz < 4:
        raise ValueError("resolution must be at least (4, 4)")
    x_lo, x_hi, z_lo, z_hi = spec.bounding_box()
    hx = (x_hi - x_lo) / nx
    hz = (z_hi - z_lo) / nz
    xc = x_lo + hx * (np.arange(nx) + 0.5)
    zc = z_lo + hz * (np.arange(nz) + 0.5)
    Z, X = np.meshgrid(zc, xc, indexing="ij")  # (nz, nx), z-major rows
    nodes = np.column_stack([X.ravel(), Z.ravel()])  # (n, 2)
    weights = np.full(len(nodes), hx * hz)

    v_mid = np.zeros(len(nodes), dtype=complex)
    v_quad = np.zeros(len(nodes), dtype=complex)
    for s in spec.shapes:
        inside = s.contains(nodes[:, 0], nodes[:, 1])
        if spec.additive:
            v_mid += np.where(inside, s.contrast, 0.0)
        else:
            v_mid = np.where((v_mid == 0) & inside, s.contrast, v_mid)
        # overlap fractions only matter near the boundary; pixels fully
        # inside or outside get 1 or 0 from the exact routine anyway
        sx, sz = s.x_extent, s.z_extent
        near = (
            (nodes[:, 0] + 0.5 * hx >= sx[0])
            & (nodes[:, 0] - 0.5 * hx <= sx[1])
            & (nodes[:, 1] + 0.5 * hz >= sz[0])
            & (nodes[:, 1] - 0.5 * hz <= sz[1])
        )
        for i in np.nonzero(near)[0]:
            f = _pixel_overlap_fraction(
                s,
                nodes[i, 0] - 0.5 * hx,
                nodes[i, 0] + 0.5 * hx,
                nodes[i, 1] - 0.5 * hz,
                nodes[i, 1] + 0.5 * hz,
            )
            if f > 0:
                v_quad[i] += s.contrast * f

    if np.isrealobj(np.asarray([s.contrast for s in spec.shapes])) or all(
        complex(s.contrast).imag == 0 for s in spec.shapes
    ):
        v_mid = np.real(v_mid).astype(complex)
        v_quad = np.real(v_quad).astype(complex)
    return CellGrid(
        spec=spec,
        nodes=nodes,
        weights=weights,
        v_values=v_mid,
        v_quad=v_quad,
        resolution=(nx, nz),
    )


def _sinc(z):
    """sin(z)/z, entire, safe at z = 0, complex-capable."""
    za = np.asarray(z)
    if np.isrealobj(za):
        return np.sinc(np.asarray(za, dtype=float) / np.pi)
    z = np.asarray(za, dtype=complex)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    return np.where(small, 1.0 - z * z / 6.0, np.sin(zs) / zs)


def _j1_over(z):
    """J1(z)/z, entire and even, safe at z = 0.

    Real arguments go through the fast real-valued Bessel routine; that
    path dominates the dense momentum-operator assembly.
    """
    za = np.asarray(z)
    if np.isrealobj(za):
        zr = np.asarray(za, dtype=float)
        small = np.abs(zr) < 1e-6
        zs = np.where(small, 1.0, zr)
        return np.where(small, 0.5 - zr * zr / 16.0, j1(zs) / zs).astype(complex)
    z = np.asarray(za, dtype=complex)
    small = np.abs(z) < 1e-6
    zs = np.where(small, 1.0, z)
    return np.where(small, 0.5 - z * z / 16.0, jv(1, zs) / zs)


def q_transform(spec: ScattererSpec, K) -> complex | np.ndarray:
    """Fourier transform (1/2pi) integral of V0 e^{-i K.r} over the cell.

    Closed form per primitive: a disk of radius a and contrast chi centered
    at r0 contributes chi e^{-i K.r0} a^2 J1(a|K|)/(a|K|); a w x h rectangle
    contributes chi e^{-i K.r0} (w h / 2pi) sinc(Kx w/2) sinc(Kz h/2).
    Entire in both variables; the sqrt branch inside |K| is irrelevant
    because J1(z)/z is even. Accepts scalar or broadcastable array Kx, Kz.
    """
    real_args = np.isrealobj(np.asarray(K[0])) and np.isrealobj(np.asarray(K[1]))
    Kx = np.asarray(K[0], dtype=float if real_args else complex)
    Kz = np.asarray(K[1], dtype=float if real_args else complex)
    out = np.zeros(np.broadcast(Kx, Kz).shape, dtype=complex)
    for s in spec.shapes:
        phase = np.exp(-1j * (Kx * s.center[0] + Kz * s.center[1]))
        if s.kind == "disk":
            a = s.size
            kk = np.sqrt(np.abs(Kx * Kx + Kz * Kz)) if real_args else np.sqrt(Kx * Kx + Kz * Kz)
            out = out + s.contrast * phase * a * a * _j1_over(a * kk)
        else:
            w, h = s.size
            out = out + (
                s.contrast
                * phase
                * (w * h / (2.0 * np.pi))
                * _sinc(0.5 * w * Kx)
                * _sinc(0.5 * h * Kz)
            )
    if out.shape == ():
        return complex(out)
    return out


def q_transform_grid(grid: CellGrid, K) -> complex | np.ndarray:
    """Same transform evaluated by the grid quadrature (single cell)."""
    base = grid.base_cell()
    Kx = np.asarray(K[0], dtype=complex)
    Kz = np.asarray(K[1], dtype=complex)
    ph = np.exp(
        -1j
        * (
            np.multiply.outer(Kx, base.nodes[:, 0])
            + np.multiply.outer(Kz, base.nodes[:, 1])
        )
    )
    out = ph @ (base.v_quad * base.weights) / (2.0 * np.pi)
    if out.shape == ():
        return complex(out)
    return out
