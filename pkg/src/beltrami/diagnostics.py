"""Entropy, energy and equilibrium diagnostics for grid densities and particle ensembles.

Grid integrals use the midpoint rule on the solver grid and gradients use the
grid's second-order centered differences.  Reductions are accumulated in
extended precision.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import DomainError
from .grid import DensityField, Grid3, stable_sum
from .operators import (AntisymOperator, R3VectorField, ScalarField, TimeDependentField, operator_divergence,
                        w_to_operator)

Array = np.ndarray


def as_operator(J: Union[AntisymOperator, R3VectorField]) -> AntisymOperator:
    op = w_to_operator(J) if isinstance(J, R3VectorField) else J
    if op.dimension != 3:
        raise ValueError("grid diagnostics need a three-dimensional operator")
    return op


def _require_positive(f: DensityField, what: str) -> None:
    if not np.all(f.values > 0):
        raise DomainError(f"{what} needs f > 0 on the grid (min f = {f.min:.3e})")


def _integral(f: DensityField, cell_values: Array) -> float:
    return stable_sum(cell_values) * f.grid.cell_volume


def _xlogx(v: Array) -> Array:
    out = np.zeros_like(v)
    pos = v > 0
    out[pos] = v[pos] * np.log(v[pos])
    return out


def entropy_grid(f: DensityField) -> float:
    """S = -int f log f dV; empty cells contribute zero."""
    if np.any(f.values < 0):
        raise DomainError(f"negative density (min f = {f.min:.3e})")
    return -_integral(f, _xlogx(f.values))


def _on_grid(g, grid: Grid3, name: str) -> Array:
    if isinstance(g, ScalarField):
        return np.asarray(g(grid.centers()), dtype=float)
    arr = np.asarray(g, dtype=float)
    if arr.shape != grid.shape:
        raise ValueError(f"{name} array shape {arr.shape} does not match grid {grid.shape}")
    return arr


def relative_entropy(f: DensityField, g) -> float:
    """S_g = -int f log(f / g) dV for a positive weight ``g`` (field or cell array)."""
    if np.any(f.values < 0):
        raise DomainError(f"negative density (min f = {f.min:.3e})")
    gv = _on_grid(g, f.grid, "weight")
    if np.any(gv <= 0):
        raise DomainError("weight g must be positive on the grid")
    v = f.values
    terms = np.zeros_like(v)
    pos = v > 0
    terms[pos] = v[pos] * np.log(v[pos] / gv[pos])
    return -_integral(f, terms)


def energy(f: DensityField, H0: ScalarField) -> float:
    """E = int f H0 dV."""
    return _integral(f, f.values * _on_grid(H0, f.grid, "H0"))


def free_energy(f: DensityField, H0: ScalarField, beta: float) -> float:
    """S - beta E, the functional that never decreases when kappa = 1 / beta (up to grid error)."""
    return entropy_grid(f) - beta * energy(f, H0)


def _boltzmann_vector(f: DensityField, J, H0: Optional[ScalarField], beta: float, weight=None) -> tuple:
    """J applied to grad log(f / g) + beta grad H0 at the cell centers."""
    grid = f.grid
    op = as_operator(J)
    x = grid.centers()
    logf = np.log(f.values)
    if weight is not None:
        gv = _on_grid(weight, grid, "weight")
        if np.any(gv <= 0):
            raise DomainError("weight g must be positive on the grid")
        logf = logf - np.log(gv)
    v = np.stack(grid.gradient(logf), axis=-1)
    if H0 is not None and beta:
        v = v + beta * H0.gradient(x)
    Jm = op.matrix(x)
    return np.einsum("...ij,...j->...i", Jm, v), Jm


def entropy_production(f: DensityField, J, H0: Optional[ScalarField], beta: float, D: float) -> float:
    """(D/2) int f |J (grad log f + beta grad H0)|^2 dV  (non-negative)."""
    _require_positive(f, "entropy_production")
    u, _ = _boltzmann_vector(f, J, H0, beta)
    return 0.5 * D * _integral(f, f.values * np.sum(u * u, axis=-1))


def boltzmann_residual(f: DensityField, H0: Optional[ScalarField], beta: float, J, weight=None) -> float:
    """max over cells of |J (grad log(f/g) + beta grad H0)|; invariant under f -> c f."""
    _require_positive(f, "boltzmann_residual")
    u, _ = _boltzmann_vector(f, J, H0, beta, weight)
    return float(np.max(np.linalg.norm(u, axis=-1)))


def energy_balance_check(f: DensityField, J, H0: ScalarField, params) -> tuple:
    """Both sides of the stationary energy balance, evaluated on ``f``.

    lhs = (D/2) int f grad H0 . J J^T (beta grad H0 + grad log f) dV
    rhs = beta kappa int f (d_i J^{ij}) d_j H0 dV
    """
    _require_positive(f, "energy_balance_check")
    beta = params.beta
    if not math.isfinite(beta * params.kappa):
        raise ValueError("kappa * beta must be finite")
    op = as_operator(J)
    x = f.grid.centers()
    gH = H0.gradient(x)
    if not np.any(gH):
        return 0.0, 0.0
    Jm = op.matrix(x)
    v = np.stack(f.grid.gradient(np.log(f.values)), axis=-1) + beta * gH
    # J J^T v = -J (J v)
    Kv = -np.einsum("...ij,...j->...i", Jm, np.einsum("...ij,...j->...i", Jm, v))
    lhs = 0.5 * params.D * _integral(f, f.values * np.sum(gH * Kv, axis=-1))
    div = operator_divergence(op, x)
    rhs = beta * params.kappa * _integral(f, f.values * np.sum(div * gH, axis=-1))
    return lhs, rhs


def h0_rate_average(state, H0: TimeDependentField, t: Optional[float] = None) -> float:
    """Average of dH0/dt: int f dH0/dt dV for a grid density, ensemble mean for particles."""
    if not isinstance(H0, TimeDependentField) or H0.rate is None:
        raise ValueError("H0 must be time dependent with a time-derivative evaluator")
    if isinstance(state, DensityField):
        if t is None:
            raise ValueError("time t is required for a grid density")
        return _integral(state, state.values * H0.time_rate(state.grid.centers(), t))
    tt = state.time if t is None else t
    rates = H0.time_rate(state.positions, tt)
    return stable_sum(rates) / rates.size


# -- particle histograms ------------------------------------------------------


@dataclass
class HistogramDensity:
    """Binned empirical density of a particle ensemble."""

    edges: list
    counts: Array
    density: Array

    @property
    def bin_volume(self) -> Array:
        widths = [np.diff(e) for e in self.edges]
        return np.prod(np.meshgrid(*widths, indexing="ij"), axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def histogram(ensemble, grid: Grid3) -> HistogramDensity:
    """Histogram of particle positions on the cells of ``grid``."""
    x = np.asarray(getattr(ensemble, "positions", ensemble), dtype=float)
    lo, hi = np.asarray(grid.lower), np.asarray(grid.upper)
    outside = np.any((x < lo) | (x > hi), axis=1)
    if outside.any():
        raise DomainError(f"{int(outside.sum())} particle(s) outside the histogram range")
    edges = [np.linspace(grid.lower[a], grid.upper[a], grid.shape[a] + 1) for a in range(3)]
    counts, _ = np.histogramdd(x, bins=edges)
    counts = counts.astype(np.int64)
    density = counts / (len(x) * grid.cell_volume)
    return HistogramDensity(edges, counts, density)


def _probabilities(h: HistogramDensity) -> tuple:
    p = h.counts.ravel() / h.total
    vol = np.broadcast_to(h.bin_volume, h.counts.shape).ravel()
    occ = p > 0
    return p[occ], vol[occ]


def entropy_particles(h: HistogramDensity) -> float:
    """Plug-in entropy -sum p log(p / V_bin) of a histogram."""
    p, vol = _probabilities(h)
    return -float(np.sum(p * np.log(p / vol)))


def plugin_entropy_bias(h: HistogramDensity) -> float:
    """Leading-order bias of the plug-in estimate, -(occupied bins - 1) / (2 N).

    The plug-in estimate is biased low; add the negative of this value to correct it.
    """
    occupied = int(np.count_nonzero(h.counts))
    return -(occupied - 1) / (2.0 * h.total)


def plugin_entropy_stderr(h: HistogramDensity) -> float:
    """Delta-method standard error sqrt(Var[log(p/V)] / N) of the plug-in entropy."""
    p, vol = _probabilities(h)
    s = np.log(p / vol)
    var = float(np.sum(p * s * s) - np.sum(p * s) ** 2)
    return math.sqrt(max(var, 0.0) / h.total)


def marginal_histogram(values, bins: int, lower: float, upper: float) -> tuple:
    """Normalized 1D histogram; returns (edges, density)."""
    edges = np.linspace(lower, upper, bins + 1)
    counts, _ = np.histogram(np.asarray(values, float), bins=edges)
    return edges, counts / (counts.sum() * np.diff(edges))


def binned_l1(p: Array, q: Array, widths) -> float:
    """sum |p - q| * width for two binned densities on the same bins."""
    return float(np.sum(np.abs(np.asarray(p) - np.asarray(q)) * np.asarray(widths)))


# -- export -------------------------------------------------------------------


@dataclass
class TimeSeries:
    times: Array
    values: Array
    label: str = "value"

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        if self.times.shape != self.values.shape or self.times.ndim != 1:
            raise ValueError("times and values must be 1D arrays of equal length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    def slope(self) -> Array:
        """Centered finite-difference derivative (one-sided at the ends)."""
        return np.gradient(self.values, self.times)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", self.label])
            for t, v in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_csv(cls, path) -> "TimeSeries":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        label = rows[0][1]
        data = np.array(rows[1:], dtype=float).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], label)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def write_summary(path, summary: dict) -> None:
    """Summary JSON (S_final, E_drift, residuals, tolerances, pass/fail flags, ...)."""
    with open(path, "w") as fh:
        json.dump(_jsonable(summary), fh, indent=2, sort_keys=True)
        fh.write("\n")
