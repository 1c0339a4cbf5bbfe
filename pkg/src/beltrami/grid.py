"""Cell-centered grids on boxes in R^3 and the densities and fluxes living on them."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DimensionError

Array = np.ndarray

BOUNDARY_KINDS = ("periodic", "zero-flux")
MIN_CELLS = 8


def stable_sum(a) -> float:
    """Sum in extended precision, so partial-sum order cannot matter at double precision."""
    return float(np.sum(np.asarray(a, dtype=np.longdouble)))


@dataclass(frozen=True)
class Grid3:
    """Uniform cell-centered grid: ``shape[a]`` cells of width ``spacing[a]`` on axis ``a``."""

    shape: tuple
    lower: tuple
    upper: tuple
    kinds: tuple = ("periodic", "periodic", "periodic")

    def __post_init__(self):
        if not (len(self.shape) == len(self.lower) == len(self.upper) == len(self.kinds) == 3):
            raise DimensionError("Grid3 needs three axes")
        shape = tuple(int(s) for s in self.shape)
        if min(shape) < MIN_CELLS:
            raise ValueError(f"at least {MIN_CELLS} cells per axis required, got {shape}")
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if not np.all(hi > lo):
            raise ValueError("upper must exceed lower on every axis")
        bad = [k for k in self.kinds if k not in BOUNDARY_KINDS]
        if bad:
            raise ValueError(f"unknown boundary kind(s) {bad}; expected {BOUNDARY_KINDS}")
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "lower", tuple(lo.tolist()))
        object.__setattr__(self, "upper", tuple(hi.tolist()))
        object.__setattr__(self, "kinds", tuple(self.kinds))

    @classmethod
    def cube(cls, cells: int, lower: float = 0.0, upper: float = 2 * np.pi, kind: str = "periodic") -> "Grid3":
        return cls((cells,) * 3, (lower,) * 3, (upper,) * 3, (kind,) * 3)

    @property
    def spacing(self) -> Array:
        return (np.asarray(self.upper) - np.asarray(self.lower)) / np.asarray(self.shape)

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    @property
    def volume(self) -> float:
        return float(np.prod(np.asarray(self.upper) - np.asarray(self.lower)))

    @property
    def periodic(self) -> tuple:
        return tuple(k == "periodic" for k in self.kinds)

    @property
    def zero_flux(self) -> tuple:
        return tuple(k == "zero-flux" for k in self.kinds)

    def axis_centers(self, axis: int, ghost: int = 0) -> Array:
        h = self.spacing[axis]
        idx = np.arange(-ghost, self.shape[axis] + ghost)
        return self.lower[axis] + (idx + 0.5) * h

    def axis_corners(self, axis: int) -> Array:
        return self.lower[axis] + np.arange(self.shape[axis] + 1) * self.spacing[axis]

    def _mesh(self, axes) -> Array:
        X = np.meshgrid(*axes, indexing="ij")
        return np.stack(X, axis=-1)

    def centers(self, ghost: int = 0) -> Array:
        """Cell centers, shape (nx+2g, ny+2g, nz+2g, 3)."""
        return self._mesh([self.axis_centers(a, ghost) for a in range(3)])

    def corners(self) -> Array:
        """Cell corners, shape (nx+1, ny+1, nz+1, 3)."""
        return self._mesh([self.axis_corners(a) for a in range(3)])

    def pad(self, f: Array) -> Array:
        """One ghost layer: periodic wrap, or linear extrapolation on zero-flux axes."""
        out = f
        for axis in range(3):
            if self.periodic[axis]:
                out = np.concatenate([_take(out, axis, -1), out, _take(out, axis, 0)], axis=axis)
            else:
                lo = 2 * _take(out, axis, 0) - _take(out, axis, 1)
                hi = 2 * _take(out, axis, -1) - _take(out, axis, -2)
                out = np.concatenate([lo, out, hi], axis=axis)
        return np.ascontiguousarray(out)

    def gradient(self, a: Array) -> list:
        """Second-order centered differences of a cell array along each axis."""
        out = []
        for axis in range(3):
            h = self.spacing[axis]
            if self.periodic[axis]:
                out.append((np.roll(a, -1, axis) - np.roll(a, 1, axis)) / (2 * h))
            else:
                out.append(np.gradient(a, h, axis=axis, edge_order=2))
        return out

    def divergence(self, v) -> Array:
        return sum(self.gradient(v[a])[a] for a in range(3))

    def marginal(self, values: Array, axis: int) -> Array:
        """Integral over the two other axes (density of the axis coordinate)."""
        others = tuple(a for a in range(3) if a != axis)
        h = self.spacing
        return np.sum(values, axis=others) * h[others[0]] * h[others[1]]


def _take(a: Array, axis: int, index: int) -> Array:
    return np.take(a, [index], axis=axis)


@dataclass
class DensityField:
    """Cell averages of a probability density on a Grid3."""

    values: Array
    grid: Grid3

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise DimensionError(f"values shape {self.values.shape} does not match grid {self.grid.shape}")

    @property
    def mass(self) -> float:
        return stable_sum(self.values) * self.grid.cell_volume

    @property
    def min(self) -> float:
        return float(self.values.min())

    def normalized(self) -> "DensityField":
        m = self.mass
        if not m > 0:
            raise ValueError("density has non-positive mass")
        return DensityField(self.values / m, self.grid)

    def copy(self) -> "DensityField":
        return DensityField(self.values.copy(), self.grid)

    @classmethod
    def uniform(cls, grid: Grid3) -> "DensityField":
        return cls(np.full(grid.shape, 1.0 / grid.volume), grid)

    @classmethod
    def from_function(cls, grid: Grid3, fn, normalize: bool = True) -> "DensityField":
        """Sample ``fn`` at cell centers (midpoint rule) and optionally normalize."""
        d = cls(np.asarray(fn(grid.centers()), dtype=float), grid)
        return d.normalized() if normalize else d


@dataclass
class FluxField:
    """Face-normal fluxes f Z on the staggered grid.

    ``fx`` has shape (nx+1, ny, nz) and lives on x-faces; likewise ``fy``, ``fz``.
    """

    fx: Array
    fy: Array
    fz: Array
    grid: Grid3

    def divergence(self) -> Array:
        h = self.grid.spacing
        return (np.diff(self.fx, axis=0) / h[0] + np.diff(self.fy, axis=1) / h[1]
                + np.diff(self.fz, axis=2) / h[2])

    def net_boundary_flux(self) -> float:
        """Outflow through the box surface, integrated over face areas."""
        h = self.grid.spacing
        parts = [
            (self.fx[-1] - self.fx[0]) * h[1] * h[2],
            (self.fy[:, -1] - self.fy[:, 0]) * h[0] * h[2],
            (self.fz[:, :, -1] - self.fz[:, :, 0]) * h[0] * h[1],
        ]
        return sum(stable_sum(p) for p in parts)

    @classmethod
    def zeros(cls, grid: Grid3) -> "FluxField":
        nx, ny, nz = grid.shape
        return cls(np.zeros((nx + 1, ny, nz)), np.zeros((nx, ny + 1, nz)), np.zeros((nx, ny, nz + 1)), grid)


def write_density_csv(f: DensityField, path) -> None:
    pts = f.grid.centers().reshape(-1, 3)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "z", "f"])
        for p, v in zip(pts, f.values.ravel()):
            w.writerow([repr(float(p[0])), repr(float(p[1])), repr(float(p[2])), repr(float(v))])


def density_records(f: DensityField) -> Array:
    """(cells, 4) array of x, y, z, f used by the binary snapshot layout."""
    return np.column_stack([f.grid.centers().reshape(-1, 3), f.values.ravel()])


def as_density(f, grid: Optional[Grid3] = None) -> DensityField:
    if isinstance(f, DensityField):
        return f
    if grid is None:
        raise ValueError("a grid is required to wrap a raw array")
    return DensityField(f, grid)
