"""Fokker-Planck solver on a three-dimensional box in conservative flux form.

The density evolves as df/dt = -div(f Z) with face fluxes

    f Z^i = a^i f - (D/2) J^{ik} d_j (J^{jk} f),
    a = (J - gamma J J^T) grad H0 - kappa d_j J^{ij}.

Discretization: cell averages f; the products J^{jk} f are differenced at cell
corners (each derivative is the mean of the four parallel cell edges), the
flux is formed at corners and averaged onto faces, and the update is the
exact discrete divergence of the face fluxes.  Zero-flux axes get vanishing
boundary face fluxes, so mass changes only by roundoff.  A uniform density
is an exact discrete steady state whenever the advective velocity is zero.
Time stepping is explicit two-stage Runge-Kutta (Heun).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import kernels
from .diagnostics import as_operator, entropy_grid
from .errors import DomainError, NotBeltramiError, SimulationError, StabilityError
from .grid import DensityField, FluxField, Grid3, stable_sum
from .operators import R3VectorField, ScalarField, TOL_ANALYTIC, field_force_r3, field_charge_r3, operator_divergence
from .sde import drift_from

Array = np.ndarray

STABILITY_FACTOR = 0.2
DEFAULT_TOL = 1e-9
# pairs (i, j) of the independent components J^{xy}, J^{xz}, J^{yz}
PAIRS = ((0, 1), (0, 2), (1, 2))


def _zero_field() -> ScalarField:
    return ScalarField.constant(0.0, 3, "zero")


def _wrap_corners(arr: Array, grid: Grid3) -> Array:
    """Make corner arrays of shape (3, nx+1, ny+1, nz+1) exactly periodic."""
    for axis, per in enumerate(grid.periodic):
        if per:
            src = [slice(None)] * 4
            dst = [slice(None)] * 4
            src[axis + 1], dst[axis + 1] = 0, -1
            arr[tuple(dst)] = arr[tuple(src)]
    return arr


def _wrap_padded(arr: Array, grid: Grid3) -> Array:
    """Copy interior values into the ghost layers of periodic axes."""
    for axis, per in enumerate(grid.periodic):
        if per:
            n = grid.shape[axis]
            for dst, src in ((0, n), (n + 1, 1)):
                a = [slice(None)] * 4
                b = [slice(None)] * 4
                a[axis + 1], b[axis + 1] = dst, src
                arr[tuple(a)] = arr[tuple(b)]
    return arr


@dataclass
class SteadyStateResult:
    density: DensityField
    residual: float
    converged: bool
    steps: int
    time: float
    dt: float
    history: dict = field(default_factory=dict)
    clip_events: list = field(default_factory=list)

    def series(self, key: str) -> Array:
        return np.asarray(self.history[key])


class FpeOperator:
    """Discrete right-hand side with all coefficient fields precomputed.

    ``J`` may be an n = 3 antisymmetric operator or an R^3 vector field w.
    """

    def __init__(self, grid: Grid3, J, H0: Optional[ScalarField] = None, D: float = 1.0,
                 gamma: float = 0.0, kappa: float = 0.0):
        if D < 0 or gamma < 0 or kappa < 0:
            raise ValueError("D, gamma and kappa must be non-negative")
        self.grid = grid
        self.op = as_operator(J)
        self.H0 = H0 if H0 is not None else _zero_field()
        self.D, self.gamma, self.kappa = float(D), float(gamma), float(kappa)

        Jc = self.op.matrix(grid.centers(ghost=1))
        self.jc = _wrap_padded(np.ascontiguousarray(np.stack([Jc[..., i, j] for i, j in PAIRS])), grid)

        xk = grid.corners()
        Jk = self.op.matrix(xk)
        self.jk = _wrap_corners(np.ascontiguousarray(np.stack([Jk[..., i, j] for i, j in PAIRS])), grid)
        div = operator_divergence(self.op, xk) if self.kappa else None
        adv = drift_from(Jk, div, self.H0.gradient(xk), self.gamma, self.kappa)
        self.adv = _wrap_corners(np.ascontiguousarray(np.moveaxis(adv, -1, 0)), grid)

    @classmethod
    def from_params(cls, grid: Grid3, J, H0, params) -> "FpeOperator":
        """Build from any object with D, gamma and kappa attributes (e.g. SdeParams)."""
        return cls(grid, J, H0, params.D, params.gamma, params.kappa)

    @property
    def beta(self) -> float:
        return 0.0 if self.gamma == 0 else 2.0 * self.gamma / self.D

    def _evaluate(self, values: Array):
        h = self.grid.spacing
        return kernels.corner_flux_divergence(self.grid.pad(values), self.jc, self.jk, self.adv,
                                              0.5 * self.D, h[0], h[1], h[2], self.grid.zero_flux)

    def rhs(self, f) -> Array:
        """df/dt as a cell array."""
        return self._evaluate(_values(f, self.grid))[0]

    def assemble_flux(self, f) -> FluxField:
        _, fx, fy, fz = self._evaluate(_values(f, self.grid))
        return FluxField(fx, fy, fz, self.grid)

    def stable_dt(self) -> float:
        """0.2 h^2 / (D max|w|^2 + h max|a|) with h the smallest spacing."""
        h = float(self.grid.spacing.min())
        w2 = float(np.max(np.sum(self.jk ** 2, axis=0)))
        a = float(np.max(np.sqrt(np.sum(self.adv ** 2, axis=0))))
        denom = self.D * w2 + h * a
        return math.inf if denom == 0 else STABILITY_FACTOR * h * h / denom

    def _check_dt(self, dt: float) -> None:
        if not dt > 0:
            raise ValueError("dt must be positive")
        bound = self.stable_dt()
        if dt > bound * (1 + 1e-12):
            raise StabilityError(f"dt = {dt:.3e} exceeds the stability bound {bound:.3e}")

    def _rk2(self, f: Array, dt: float, r0: Optional[Array] = None) -> Array:
        r0 = self.rhs(f) if r0 is None else r0
        f1 = f + dt * r0
        return 0.5 * (f + f1 + dt * self.rhs(f1))

    def step(self, f, dt: float) -> DensityField:
        """One Heun step; raises StabilityError above the stability bound."""
        self._check_dt(dt)
        return DensityField(self._rk2(_values(f, self.grid), dt), self.grid)

    def advance(self, f, dt: float, steps: int) -> DensityField:
        self._check_dt(dt)
        v = _values(f, self.grid).copy()
        for _ in range(steps):
            v = self._rk2(v, dt)
        return DensityField(v, self.grid)

    def steady_state(self, f0, tol: float = DEFAULT_TOL, max_steps: int = 1_000_000, dt: Optional[float] = None,
                     record_every: int = 0, log=None, log_every: int = 100, strict: bool = False,
                     monitor: Optional[Callable] = None) -> SteadyStateResult:
        """March until ||df/dt||_inf / ||f||_inf <= tol or ``max_steps``.

        record_every : store step, time, mass, min_f, entropy and residual every
            that many steps (0 stores only the first and last state).
        log          : open text file receiving the same records as JSON lines.
        strict       : raise on the first negative value instead of clipping it.
        monitor      : called as ``monitor(step, time, values)`` after every step.
        Non-convergence returns the iterate with the smallest residual seen, flagged.
        """
        dt = self.stable_dt() if dt is None else dt
        self._check_dt(dt)
        f = _values(f0, self.grid).copy()
        hist = {k: [] for k in ("step", "time", "mass", "min_f", "entropy", "residual")}
        clips = []
        vol = self.grid.cell_volume
        t = 0.0
        best = (math.inf, None, 0, 0.0)

        def snapshot(k, res):
            return {"step": k, "time": t, "mass": stable_sum(f) * vol, "min_f": float(f.min()),
                    "entropy": entropy_grid(DensityField(np.maximum(f, 0), self.grid)), "residual": res}

        k = 0
        while True:
            r = self.rhs(f)
            res = float(np.max(np.abs(r)) / np.max(np.abs(f)))
            if not math.isfinite(res):
                raise SimulationError(f"non-finite density at step {k}")
            done = res <= tol or k >= max_steps
            keep = done or k == 0 or (record_every and k % record_every == 0)
            write = log is not None and (done or k % log_every == 0)
            if keep or write:
                rec = snapshot(k, res)
                if keep:
                    for key, v in rec.items():
                        hist[key].append(v)
                if write:
                    log.write(json.dumps(rec) + "\n")
            if res < 0.5 * best[0] or done:
                if res < best[0]:
                    best = (res, f.copy(), k, t)
            if done:
                break
            f = self._rk2(f, dt, r)
            t += dt
            k += 1
            if f.min() < 0:
                event = {"step": k, "min_f": float(f.min()), "cells": int(np.count_nonzero(f < 0))}
                if strict:
                    raise SimulationError(f"negative density at step {k}: {event}")
                clips.append(event)
                f = np.maximum(f, 0.0)
            if monitor is not None:
                monitor(k, t, f)

        converged = res <= tol
        if not converged and best[0] < res:
            res, f, k, t = best
        return SteadyStateResult(DensityField(f, self.grid), res, converged, k, t, dt, hist, clips)


def _values(f, grid: Grid3) -> Array:
    v = f.values if isinstance(f, DensityField) else np.asarray(f, dtype=float)
    if v.shape != grid.shape:
        raise ValueError(f"density shape {v.shape} does not match grid {grid.shape}")
    return v


# -- module-level conveniences ------------------------------------------------


def assemble_flux(f: DensityField, J, H0: Optional[ScalarField], params) -> FluxField:
    return FpeOperator.from_params(f.grid, J, H0, params).assemble_flux(f)


def apply_flux(f: DensityField, flux: FluxField, dt: float) -> DensityField:
    """Explicit conservative update f - dt div(flux)."""
    return DensityField(f.values - dt * flux.divergence(), f.grid)


def steady_state(f0: DensityField, J, H0: Optional[ScalarField], params, tol: float = DEFAULT_TOL,
                 max_steps: int = 1_000_000, **kwargs) -> SteadyStateResult:
    return FpeOperator.from_params(f0.grid, J, H0, params).steady_state(f0, tol, max_steps, **kwargs)


# -- independent centered-difference forms (R^3) -------------------------------


def _as_field(w) -> R3VectorField:
    if not isinstance(w, R3VectorField):
        raise TypeError("an R^3 vector field w is required")
    return w


def _cross(a: Array, b: Array) -> Array:
    return np.cross(a, b, axis=-1)


def _curl(grid: Grid3, v: Array) -> Array:
    """Centered-difference curl of a cell vector field (..., 3)."""
    g = [grid.gradient(v[..., m]) for m in range(3)]  # g[m][k] = d_k v_m
    return np.stack([g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]], axis=-1)


def _div(grid: Grid3, v: Array) -> Array:
    return grid.divergence([v[..., a] for a in range(3)])


def fpew_rhs(f, w: R3VectorField, H0: Optional[ScalarField], params) -> Array:
    """df/dt from the cross-product form, by centered differences at cell centers:

    div{ w x [(-grad H0 + gamma grad H0 x w) f + (D/2) curl(w f)] - kappa f curl w }.
    """
    w = _as_field(w)
    grid = f.grid
    fv = f.values
    x = grid.centers()
    wv = w(x)
    H0 = H0 if H0 is not None else _zero_field()
    gH = H0.gradient(x)
    inner = (-gH + params.gamma * _cross(gH, wv)) * fv[..., None] + 0.5 * params.D * _curl(grid, wv * fv[..., None])
    total = _cross(wv, inner) - params.kappa * fv[..., None] * w.curl(x)
    return _div(grid, total)


def _require_beltrami(w: R3VectorField, x: Array, tol: float) -> None:
    b = np.linalg.norm(field_force_r3(w, x), axis=-1)
    if b.max() > tol:
        raise NotBeltramiError(f"{w.name}: max |w x curl w| = {b.max():.3e} on the grid exceeds {tol:.1e}")


def beltrami_form_residual(f: DensityField, w: R3VectorField, H0: Optional[ScalarField], params,
                           tol: float = TOL_ANALYTIC) -> Array:
    """df/dt from the form valid for Beltrami fields, by centered differences:

    div{ f [-w x grad H0 - kappa curl w + (D/2) w x ((grad log f + beta grad H0) x w)] }.
    Rejects fields that are not Beltrami on the grid.
    """
    w = _as_field(w)
    grid = f.grid
    x = grid.centers()
    _require_beltrami(w, x, tol)
    if not np.all(f.values > 0):
        raise DomainError("the Beltrami form needs f > 0")
    wv = w(x)
    H0 = H0 if H0 is not None else _zero_field()
    gH = H0.gradient(x)
    beta = 0.0 if params.gamma == 0 else 2.0 * params.gamma / params.D
    glog = np.stack(grid.gradient(np.log(f.values)), axis=-1) + beta * gH
    vel = -_cross(wv, gH) - params.kappa * w.curl(x) + 0.5 * params.D * _cross(wv, _cross(glog, wv))
    return _div(grid, f.values[..., None] * vel)


def stationary_residual(w: R3VectorField, f: ScalarField, x) -> Array:
    """Pointwise B f + b . grad f + div[w x (grad f x w)] from analytic derivatives.

    Second derivatives of w enter only through the field charge B, which is
    differenced from the analytic field force.
    """
    w = _as_field(w)
    x = np.asarray(x, dtype=float)
    w.check_domain(x)
    wv = w(x)
    jw = w.jac(x)  # jw[..., i, j] = d_j w_i
    fv = f(x)
    gf = f.gradient(x)
    Hf = f.hess(x)
    b = field_force_r3(w, x)
    charge = field_charge_r3(w, x)
    # w x (grad f x w) = |w|^2 grad f - (w . grad f) w
    w2 = np.sum(wv * wv, axis=-1)
    grad_w2 = 2.0 * np.einsum("...ij,...i->...j", jw, wv)
    wg = np.sum(wv * gf, axis=-1)
    grad_wg = np.einsum("...ij,...i->...j", jw, gf) + np.einsum("...ij,...i->...j", Hf, wv)
    div_w = np.trace(jw, axis1=-2, axis2=-1)
    lap_f = np.trace(Hf, axis1=-2, axis2=-1)
    diffusion = np.sum(grad_w2 * gf, axis=-1) + w2 * lap_f - np.sum(grad_wg * wv, axis=-1) - wg * div_w
    return charge * fv + np.sum(b * gf, axis=-1) + diffusion
