"""Particle ensembles driven by the stochastic Hamiltonian equation of motion.

Each particle obeys the Stratonovich SDE

    dx^i = [(J^{ij} - gamma J^{ik} J^{jk}) d_j H0 - kappa d_j J^{ij}] dt + sqrt(D) J^{ij} o dW_j .

Noise is drawn from a counter-based Philox stream: particle ``p`` at step ``s``
uses counter block ``(p * nb + b, s)`` under key ``seed``, so trajectories do
not depend on how particles are batched or partitioned.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Iterator, Optional, Sequence

import numpy as np

from . import kernels
from .errors import DimensionError, SimulationError
from .operators import AntisymOperator, ScalarField, field_at, operator_divergence

Array = np.ndarray

SCHEMES = ("heun", "ito-euler")
DEFAULT_DT = 1e-3
BINARY_MAGIC = b"BELTRAMI"
WORDS_PER_BLOCK = 4


@dataclass(frozen=True)
class SdeParams:
    """Physical and numerical parameters of the particle SDE."""

    D: float = 1.0
    gamma: float = 0.0
    kappa: float = 0.0
    dt: float = DEFAULT_DT
    steps: int = 0
    seed: int = 0
    scheme: str = "heun"

    def __post_init__(self):
        errors = []
        if not (math.isfinite(self.D) and self.D >= 0):
            errors.append(f"D must be >= 0, got {self.D}")
        if not (math.isfinite(self.gamma) and self.gamma >= 0):
            errors.append(f"gamma must be >= 0, got {self.gamma}")
        if not (math.isfinite(self.kappa) and self.kappa >= 0):
            errors.append(f"kappa must be >= 0, got {self.kappa}")
        if not (math.isfinite(self.dt) and self.dt > 0):
            errors.append(f"dt must be > 0, got {self.dt}")
        if int(self.steps) != self.steps or self.steps < 0:
            errors.append(f"steps must be a non-negative integer, got {self.steps}")
        if not 0 <= int(self.seed) < 2**64:
            errors.append(f"seed must fit in 64 bits, got {self.seed}")
        if self.scheme not in SCHEMES:
            errors.append(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if errors:
            raise ValueError("; ".join(errors))

    @property
    def beta(self) -> float:
        """Inverse temperature 2 gamma / D (infinite when D = 0 and gamma > 0)."""
        if self.gamma == 0:
            return 0.0
        return math.inf if self.D == 0 else 2.0 * self.gamma / self.D

    @classmethod
    def h_theorem(cls, D: float, gamma: float, **kwargs) -> "SdeParams":
        """Parameters with kappa = 1 / beta = D / (2 gamma)."""
        if gamma <= 0 or D <= 0:
            raise ValueError("the h-theorem preset needs D > 0 and gamma > 0")
        return cls(D=D, gamma=gamma, kappa=D / (2.0 * gamma), **kwargs)


@dataclass(frozen=True)
class DomainSpec:
    """Axis-aligned box with a boundary kind per axis."""

    lower: tuple
    upper: tuple
    kinds: tuple

    def __post_init__(self):
        lo, hi = np.asarray(self.lower, float), np.asarray(self.upper, float)
        if lo.shape != hi.shape or lo.ndim != 1 or len(self.kinds) != lo.size:
            raise DimensionError("lower, upper and kinds must have one entry per axis")
        if not np.all(lo < hi):
            raise ValueError(f"lower < upper required on every axis, got {self.lower} / {self.upper}")
        bad = [k for k in self.kinds if k not in ("periodic", "reflecting")]
        if bad:
            raise ValueError(f"unknown boundary kind(s) {bad}")
        object.__setattr__(self, "lower", tuple(float(v) for v in lo))
        object.__setattr__(self, "upper", tuple(float(v) for v in hi))
        object.__setattr__(self, "kinds", tuple(self.kinds))

    @property
    def dimension(self) -> int:
        return len(self.kinds)

    @property
    def periodic_mask(self) -> Array:
        return np.array([k == "periodic" for k in self.kinds], dtype=np.uint8)

    @property
    def extent(self) -> Array:
        return np.asarray(self.upper) - np.asarray(self.lower)

    @property
    def volume(self) -> float:
        return float(np.prod(self.extent))

    def contains(self, x) -> Array:
        x = np.asarray(x, float)
        lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        per = self.periodic_mask.astype(bool)
        upper_ok = np.where(per, x < hi, x <= hi)
        return np.all((x >= lo) & upper_ok, axis=-1)

    @classmethod
    def periodic_box(cls, n: int = 3, lower: float = 0.0, upper: float = 2 * math.pi) -> "DomainSpec":
        return cls((lower,) * n, (upper,) * n, ("periodic",) * n)


@dataclass
class EnsembleState:
    """Positions of N particles plus everything that fixes their future noise.

    The random stream of particle ``particle_ids[p]`` at step ``step`` is keyed by
    ``seed``; no generator objects are stored.
    """

    positions: Array
    time: float = 0.0
    step: int = 0
    seed: int = 0
    particle_ids: Optional[Array] = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=float)
        if self.positions.ndim != 2:
            raise DimensionError("positions must have shape (N, n)")
        if self.particle_ids is None:
            self.particle_ids = np.arange(len(self.positions), dtype=np.uint64)
        else:
            self.particle_ids = np.asarray(self.particle_ids, dtype=np.uint64)
        if self.particle_ids.shape != (len(self.positions),):
            raise DimensionError("one particle id per particle required")

    @property
    def count(self) -> int:
        return self.positions.shape[0]

    @property
    def dimension(self) -> int:
        return self.positions.shape[1]

    def rng_counters(self) -> Array:
        """Philox counter of the first block of every particle at the current step."""
        nb = blocks_per_particle(self.dimension)
        out = np.zeros((self.count, 4), dtype=np.uint64)
        out[:, 0] = self.particle_ids * np.uint64(nb)
        out[:, 1] = np.uint64(self.step)
        return out

    def copy(self) -> "EnsembleState":
        return replace(self, positions=self.positions.copy(), particle_ids=self.particle_ids.copy())

    @classmethod
    def uniform(cls, domain: DomainSpec, count: int, seed: int = 0) -> "EnsembleState":
        """Particles drawn uniformly in the box (initial positions use a separate stream)."""
        rng = np.random.default_rng([int(seed), 0x1417])
        lo, ext = np.asarray(domain.lower), domain.extent
        return cls(lo + ext * rng.random((count, domain.dimension)), seed=seed)

    @classmethod
    def gaussian(cls, domain: DomainSpec, count: int, center, width: float, seed: int = 0) -> "EnsembleState":
        """Localized Gaussian cloud, folded into the box."""
        rng = np.random.default_rng([int(seed), 0x1417])
        x = np.asarray(center, float) + width * rng.standard_normal((count, domain.dimension))
        state = cls(x, seed=seed)
        _enforce(state.positions, domain, state.step)
        return state


# -- coefficients -------------------------------------------------------------


def _matvec(M: Array, v: Array) -> Array:
    return np.einsum("...ij,...j->...i", M, v)


def _gradient(H: ScalarField, x: Array, n: int) -> Array:
    if H.dimension != n:
        raise DimensionError(f"H0 is {H.dimension}-dimensional but J is {n}-dimensional")
    return H.gradient(x)


def drift_from(Jm: Array, op_div: Optional[Array], grad_h: Array, gamma: float, kappa: float) -> Array:
    """Drift from precomputed J, grad H0 and the cocurrent d_l J^{lj} (all batched)."""
    jg = _matvec(Jm, grad_h)
    out = jg.copy()
    if gamma:
        # -gamma J J^T g = +gamma J (J g) by antisymmetry
        out += gamma * _matvec(Jm, jg)
    if kappa:
        # d_j J^{ij} = -d_j J^{ji}
        out += kappa * op_div
    return out


def drift(J: AntisymOperator, H0: ScalarField, params: SdeParams, x) -> Array:
    """(J - gamma J J^T) grad H0 - kappa d_j J^{ij} at the points ``x``."""
    x = np.asarray(x, float)
    Jm = J.matrix(x)
    div = operator_divergence(J, x) if params.kappa else None
    return drift_from(Jm, div, _gradient(H0, x, J.dimension), params.gamma, params.kappa)


def noise_amplitude(J: AntisymOperator, D: float, x) -> Array:
    """sqrt(D) J(x); contracted with standard normal increments."""
    if D < 0:
        raise ValueError("D must be >= 0")
    return math.sqrt(D) * J.matrix(x)


def ito_correction(Jm: Array, partials: Array, D: float) -> Array:
    """Drift shift (D/2) J^{kj} d_k J^{ij} turning the Stratonovich SDE into Ito form."""
    return 0.5 * D * np.einsum("...kj,...ijk->...i", Jm, partials)


# -- randomness ---------------------------------------------------------------


def blocks_per_particle(n: int) -> int:
    return -(-n // WORDS_PER_BLOCK)


def gaussian_increments(seed: int, step: int, particle_ids: Array, n: int) -> Array:
    """Standard normals of shape (N, n) for the given particles at the given step."""
    ids = np.asarray(particle_ids, dtype=np.uint64)
    nb = blocks_per_particle(n)
    words = nb * WORDS_PER_BLOCK
    if ids.size == 0:
        return np.zeros((0, n))
    if np.all(np.diff(ids.astype(np.int64)) == 1):
        bitgen = np.random.Philox(key=int(seed), counter=[int(ids[0]) * nb, int(step), 0, 0])
        raw = bitgen.random_raw(ids.size * words).reshape(ids.size, words)
    else:
        raw = np.empty((ids.size, words), dtype=np.uint64)
        for row, pid in enumerate(ids):
            bitgen = np.random.Philox(key=int(seed), counter=[int(pid) * nb, int(step), 0, 0])
            raw[row] = bitgen.random_raw(words)
    return kernels.box_muller(np.ascontiguousarray(raw), n)


# -- boundaries ---------------------------------------------------------------


def _enforce(x: Array, domain: DomainSpec, step: int) -> None:
    bad = kernels.apply_boundary(x, np.asarray(domain.lower), np.asarray(domain.upper), domain.periodic_mask)
    if bad >= 0:
        raise SimulationError(
            f"particle {bad} left the domain at step {step} "
            f"(position {x[bad].tolist()}); non-finite value or overshoot beyond one reflection, reduce dt"
        )


def apply_boundary(x, domain: DomainSpec) -> Array:
    """Wrap periodic axes, mirror reflecting axes; returns a new array."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (domain.dimension,):
        raise DimensionError("point dimension does not match the domain")
    out = np.array(x.reshape(-1, domain.dimension), order="C", copy=True)
    _enforce(out, domain, -1)
    return out.reshape(x.shape)


# -- stepping -----------------------------------------------------------------


class _Coefficients:
    """Evaluates drift, noise matrix and (for the Ito scheme) partials at time t."""

    def __init__(self, J: AntisymOperator, H0, params: SdeParams):
        self.J, self.H0, self.params = J, H0, params
        self.need_partials = params.scheme == "ito-euler"

    def __call__(self, x: Array, t: float):
        Jm = self.J.matrix(x)
        P = self.J.derivatives(x) if self.need_partials else None
        div = None
        if self.params.kappa:
            div = operator_divergence(self.J, x, P)
        grad = _gradient(field_at(self.H0, t), x, self.J.dimension)
        a = drift_from(Jm, div, grad, self.params.gamma, self.params.kappa)
        return a, Jm, P


def _check_finite(x: Array, step: int) -> None:
    finite = np.isfinite(x).all(axis=1)
    if not finite.all():
        p = int(np.argmin(finite))
        raise SimulationError(f"non-finite position for particle {p} at step {step}")


def _increments(state: EnsembleState, params: SdeParams) -> Optional[Array]:
    if params.D == 0:
        return None
    xi = gaussian_increments(state.seed, state.step, state.particle_ids, state.dimension)
    return math.sqrt(params.D * params.dt) * xi


def step_stratonovich_heun(state: EnsembleState, J: AntisymOperator, H0, params: SdeParams,
                           domain: DomainSpec, _coef: Optional[_Coefficients] = None) -> EnsembleState:
    """One Heun predictor-corrector step sharing a single Gaussian draw per particle."""
    coef = _coef or _Coefficients(J, H0, params)
    x, t, dt = state.positions, state.time, params.dt
    dw = _increments(state, params)
    a0, J0, _ = coef(x, t)
    pred = x + a0 * dt
    if dw is not None:
        pred += _matvec(J0, dw)
    _check_finite(pred, state.step)
    a1, J1, _ = coef(pred, t + dt)
    new = x + 0.5 * dt * (a0 + a1)
    if dw is not None:
        new += 0.5 * (_matvec(J0, dw) + _matvec(J1, dw))
    _check_finite(new, state.step)
    new = np.ascontiguousarray(new)
    _enforce(new, domain, state.step)
    return replace(state, positions=new, time=t + dt, step=state.step + 1)


def step_ito_euler(state: EnsembleState, J: AntisymOperator, H0, params: SdeParams,
                   domain: DomainSpec, _coef: Optional[_Coefficients] = None) -> EnsembleState:
    """Euler-Maruyama step of the equivalent Ito SDE (drift plus the noise-induced shift)."""
    coef = _coef or _Coefficients(J, H0, replace(params, scheme="ito-euler"))
    x, t, dt = state.positions, state.time, params.dt
    dw = _increments(state, params)
    a, Jm, P = coef(x, t)
    new = x + dt * (a + ito_correction(Jm, P, params.D))
    if dw is not None:
        new += _matvec(Jm, dw)
    _check_finite(new, state.step)
    new = np.ascontiguousarray(new)
    _enforce(new, domain, state.step)
    return replace(state, positions=new, time=t + dt, step=state.step + 1)


STEPPERS = {"heun": step_stratonovich_heun, "ito-euler": step_ito_euler}


def _check_inputs(initial: EnsembleState, J: AntisymOperator, H0, domain: DomainSpec) -> None:
    if initial.dimension != J.dimension or domain.dimension != J.dimension:
        raise DimensionError("ensemble, operator and domain dimensions differ")
    if H0.dimension != J.dimension:
        raise DimensionError("H0 and operator dimensions differ")
    if not domain.contains(initial.positions).all():
        raise ValueError("initial positions must lie inside the domain")


def iterate(initial: EnsembleState, J: AntisymOperator, H0, params: SdeParams, domain: DomainSpec,
            snapshot_stride: int = 1) -> Iterator[EnsembleState]:
    """Yield the initial state and then every ``snapshot_stride``-th state up to ``params.steps``.

    The final state is always yielded, even when ``steps`` is not a multiple of the stride.
    """
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be >= 1")
    _check_inputs(initial, J, H0, domain)
    stepper = STEPPERS[params.scheme]
    coef = _Coefficients(J, H0, params)
    state = initial.copy()
    yield state.copy()
    for k in range(1, params.steps + 1):
        state = stepper(state, J, H0, params, domain, coef)
        if k % snapshot_stride == 0 or k == params.steps:
            yield state.copy()


def simulate(initial: EnsembleState, J: AntisymOperator, H0, params: SdeParams, domain: DomainSpec,
             snapshot_stride: int = 1) -> list:
    """List of snapshots; see ``iterate``."""
    return list(iterate(initial, J, H0, params, domain, snapshot_stride))


def deterministic_rk4(J: AntisymOperator, H0: ScalarField, x0, dt: float, steps: int) -> Array:
    """Classical RK4 for the noiseless flow x' = J grad H0; returns the trajectory (steps+1, N, n)."""
    x = np.array(x0, dtype=float, ndmin=2)

    def f(y):
        return _matvec(J.matrix(y), H0.gradient(y))

    out = np.empty((steps + 1,) + x.shape)
    out[0] = x
    for k in range(steps):
        k1 = f(x)
        k2 = f(x + 0.5 * dt * k1)
        k3 = f(x + 0.5 * dt * k2)
        k4 = f(x + dt * k3)
        x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        out[k + 1] = x
    return out


# -- export -------------------------------------------------------------------


def write_csv(snapshots: Sequence[EnsembleState], path) -> None:
    """Columns t, particle_id, x1..xn; one row per particle per snapshot."""
    if not snapshots:
        raise ValueError("no snapshots to write")
    n = snapshots[0].dimension
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "particle_id"] + [f"x{i + 1}" for i in range(n)])
        for s in snapshots:
            for pid, row in zip(s.particle_ids, s.positions):
                writer.writerow([repr(float(s.time)), int(pid)] + [repr(float(v)) for v in row])


class BinaryWriter:
    """Streaming writer for the compact snapshot layout.

    Header: 8-byte magic, then little-endian int64 N, n, stride, count.
    Each record: float64 time followed by N*n float64 values (row-major).
    """

    def __init__(self, path, N: int, n: int, stride: int):
        self.path, self.N, self.n, self.stride = path, int(N), int(n), int(stride)
        self.count = 0
        self._fh = open(path, "wb")
        self._fh.write(BINARY_MAGIC)
        self._fh.write(np.array([self.N, self.n, self.stride, 0], dtype="<i8").tobytes())

    def write(self, t: float, values: Array) -> None:
        values = np.asarray(values, dtype="<f8")
        if values.shape != (self.N, self.n):
            raise ValueError(f"expected values of shape {(self.N, self.n)}, got {values.shape}")
        self._fh.write(np.array([t], dtype="<f8").tobytes())
        self._fh.write(np.ascontiguousarray(values).tobytes())
        self.count += 1

    def close(self) -> None:
        if self._fh.closed:
            return
        self._fh.seek(len(BINARY_MAGIC) + 3 * 8)
        self._fh.write(np.array([self.count], dtype="<i8").tobytes())
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_binary(snapshots: Sequence[EnsembleState], path, stride: int = 1) -> None:
    if not snapshots:
        raise ValueError("no snapshots to write")
    with BinaryWriter(path, snapshots[0].count, snapshots[0].dimension, stride) as w:
        for s in snapshots:
            w.write(s.time, s.positions)


@dataclass
class BinarySnapshots:
    N: int
    n: int
    stride: int
    times: Array
    values: Array = field(repr=False)


def read_binary(path) -> BinarySnapshots:
    with open(path, "rb") as fh:
        if fh.read(len(BINARY_MAGIC)) != BINARY_MAGIC:
            raise ValueError(f"{path}: not a snapshot file")
        N, n, stride, count = (int(v) for v in np.frombuffer(fh.read(32), dtype="<i8"))
        body = np.frombuffer(fh.read(), dtype="<f8")
    rec = 1 + N * n
    if body.size != rec * count:
        raise ValueError(f"{path}: truncated file ({body.size} values, expected {rec * count})")
    body = body.reshape(count, rec)
    return BinarySnapshots(N, n, stride, body[:, 0].copy(), body[:, 1:].reshape(count, N, n).copy())
