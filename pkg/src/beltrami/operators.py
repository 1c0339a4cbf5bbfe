"""Antisymmetric (bivector) operators in n dimensions.

All evaluators are vectorized: a point array has shape ``(..., n)`` and every
returned quantity keeps the leading batch shape.  Index conventions::

    components(x)[..., i, j]   = J^{ij}(x)
    partials(x)[..., i, j, k]  = d_k J^{ij}(x)
    jacobian(x)[..., i, j]     = d_j w_i(x)          (R^3 vector fields)

In R^3 an operator and a vector field are identified by J(dH) = w x grad H,
i.e. J^{ij} = -eps_{ijm} w_m, which gives w_x = J^{zy}, w_y = J^{xz},
w_z = J^{yx}.  With this identification the cocurrent (g = 1) equals
curl w, the Beltrami residual equals w x curl w, and the helicity density
h^{xyz} equals -w . curl w.

Form coefficients are stored unscaled: the factors 2 and 4 and the
alternating signs carried by the covorticity, cocurrent and field-force
forms are dropped, since every classification is a zero test.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from itertools import combinations
from typing import Callable, Optional

import numpy as np

from .errors import DimensionError, DomainError, StepSizeError

Array = np.ndarray

LEVI_CIVITA = np.zeros((3, 3, 3))
for _i, _j, _k in ((0, 1, 2), (1, 2, 0), (2, 0, 1)):
    LEVI_CIVITA[_i, _j, _k] = 1.0
    LEVI_CIVITA[_i, _k, _j] = -1.0

FD_REL_STEP = 1e-4
MIN_FD_STEP = 1e-12
MIN_WEIGHT = 1e-12
TOL_ANALYTIC = 1e-8
TOL_FINITE_DIFFERENCE = 1e-5


def _as_points(x, n: int) -> Array:
    x = np.asarray(x, dtype=float)
    if x.shape[-1:] != (n,):
        raise DimensionError(f"expected points with trailing dimension {n}, got shape {x.shape}")
    return x


def default_steps(x: Array) -> Array:
    """Per-axis finite-difference steps, ``1e-4 * max(1, |x_k|)``."""
    return FD_REL_STEP * np.maximum(1.0, np.abs(x))


def central_difference(fn: Callable[[Array], Array], x: Array, h=None, order: int = 4) -> Array:
    """Central-difference derivative of ``fn`` along every axis of ``x``.

    The derivative index is appended as the last axis of the result.
    ``h`` may be a scalar or broadcast against ``x``.
    """
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    x = np.asarray(x, dtype=float)
    steps = default_steps(x) if h is None else np.broadcast_to(np.asarray(h, dtype=float), x.shape)
    if np.any(steps < MIN_FD_STEP):
        raise StepSizeError(f"finite-difference step below {MIN_FD_STEP}")
    n = x.shape[-1]
    parts = []
    for k in range(n):
        hk = steps[..., k]
        e = np.zeros_like(x)
        e[..., k] = hk

        def at(shift):
            return np.asarray(fn(x + shift * e), dtype=float)

        if order == 2:
            d = at(1) - at(-1)
            scale = 2.0 * hk
        else:
            d = 8.0 * (at(1) - at(-1)) - (at(2) - at(-2))
            scale = 12.0 * hk
        extra = d.ndim - scale.ndim
        parts.append(d / scale.reshape(scale.shape + (1,) * extra))
    return np.stack(parts, axis=-1)


@dataclass(frozen=True)
class ScalarField:
    """Smooth scalar map with optional analytic gradient (and Hessian).

    ``eval`` maps ``(..., n)`` points to ``(...)`` values.
    """

    dimension: int
    eval: Callable[[Array], Array]
    grad: Optional[Callable[[Array], Array]] = None
    name: str = "scalar"
    hessian: Optional[Callable[[Array], Array]] = None

    def __call__(self, x) -> Array:
        x = _as_points(x, self.dimension)
        return np.broadcast_to(np.asarray(self.eval(x), dtype=float), x.shape[:-1])

    def gradient(self, x) -> Array:
        x = _as_points(x, self.dimension)
        if self.grad is not None:
            return np.broadcast_to(np.asarray(self.grad(x), dtype=float), x.shape)
        return central_difference(self.__call__, x)

    def hess(self, x) -> Array:
        x = _as_points(x, self.dimension)
        if self.hessian is not None:
            return np.broadcast_to(np.asarray(self.hessian(x), dtype=float), x.shape + (self.dimension,))
        return central_difference(self.gradient, x)

    @classmethod
    def constant(cls, value: float, dimension: int, name: Optional[str] = None) -> "ScalarField":
        return cls(
            dimension,
            lambda x: np.full(x.shape[:-1], float(value)),
            lambda x: np.zeros(x.shape),
            name or f"const({value:g})",
            lambda x: np.zeros(x.shape + (x.shape[-1],)),
        )

    @classmethod
    def coordinate(cls, axis: int, dimension: int, name: Optional[str] = None) -> "ScalarField":
        def grad(x):
            g = np.zeros(x.shape)
            g[..., axis] = 1.0
            return g

        return cls(
            dimension,
            lambda x: x[..., axis].copy(),
            grad,
            name or f"x{axis + 1}",
            lambda x: np.zeros(x.shape + (x.shape[-1],)),
        )


@dataclass(frozen=True)
class TimeDependentField:
    """Scalar field H(x, t) with gradient and time-rate evaluators.

    ``eval``, ``grad`` and ``rate`` take ``(x, t)``; ``rate`` is dH/dt at fixed x.
    """

    dimension: int
    eval: Callable[[Array, float], Array]
    grad: Callable[[Array, float], Array]
    rate: Optional[Callable[[Array, float], Array]] = None
    name: str = "H(t)"

    def at(self, t: float) -> ScalarField:
        """Frozen snapshot of the field at time ``t``."""
        return ScalarField(self.dimension, lambda x: self.eval(x, t), lambda x: self.grad(x, t), f"{self.name}@{t:g}")

    def time_rate(self, x, t: float) -> Array:
        if self.rate is None:
            raise ValueError(f"{self.name} has no time-derivative evaluator")
        x = _as_points(x, self.dimension)
        return np.broadcast_to(np.asarray(self.rate(x, t), dtype=float), x.shape[:-1])

    @classmethod
    def static(cls, H: ScalarField) -> "TimeDependentField":
        return cls(H.dimension, lambda x, t: H(x), lambda x, t: H.gradient(x), lambda x, t: np.zeros(x.shape[:-1]), H.name)


def field_at(H, t: float) -> ScalarField:
    """``H`` itself if static, else its snapshot at time ``t``."""
    return H.at(t) if isinstance(H, TimeDependentField) else H


@dataclass(frozen=True)
class AntisymOperator:
    """Antisymmetric matrix field J^{ij}(x) with optional analytic partials."""

    dimension: int
    components: Callable[[Array], Array]
    partials: Optional[Callable[[Array], Array]] = None
    name: str = "J"
    domain_guard: Optional[Callable[[Array], Array]] = None
    divergence: Optional[Callable[[Array], Array]] = None  # analytic d_l J^{lj}, optional shortcut

    def check_domain(self, x: Array) -> None:
        if self.domain_guard is None:
            return
        ok = np.asarray(self.domain_guard(x), dtype=bool)
        if not np.all(ok):
            bad = np.asarray(x)[~np.broadcast_to(ok, x.shape[:-1])]
            raise DomainError(f"{self.name}: {len(bad)} point(s) outside domain, e.g. {bad[0].tolist()}")

    def matrix(self, x) -> Array:
        x = _as_points(x, self.dimension)
        self.check_domain(x)
        n = self.dimension
        J = np.broadcast_to(np.asarray(self.components(x), dtype=float), x.shape[:-1] + (n, n))
        if not np.array_equal(J, -np.swapaxes(J, -1, -2)):
            raise ValueError(f"{self.name}: components are not antisymmetric")
        return J

    def derivatives(self, x, order: int = 4, h=None) -> Array:
        """Analytic partials when available, otherwise ``fd_partials``."""
        x = _as_points(x, self.dimension)
        if self.partials is not None:
            self.check_domain(x)
            n = self.dimension
            return np.broadcast_to(np.asarray(self.partials(x), dtype=float), x.shape[:-1] + (n, n, n))
        return fd_partials(self, x, order=order, h=h)

    @property
    def has_analytic_partials(self) -> bool:
        return self.partials is not None

    @classmethod
    def constant(cls, matrix, name: str = "J_const") -> "AntisymOperator":
        M = np.asarray(matrix, dtype=float)
        if not np.array_equal(M, -M.T):
            raise ValueError("matrix must be antisymmetric")
        n = M.shape[0]
        return cls(
            n,
            lambda x: np.broadcast_to(M, x.shape[:-1] + (n, n)).copy(),
            lambda x: np.zeros(x.shape[:-1] + (n, n, n)),
            name,
        )


@dataclass(frozen=True)
class R3VectorField:
    """Vector field w on (a subset of) R^3 with optional analytic Jacobian."""

    eval: Callable[[Array], Array]
    jacobian: Optional[Callable[[Array], Array]] = None
    domain_guard: Optional[Callable[[Array], Array]] = None
    name: str = "w"

    def check_domain(self, x: Array) -> None:
        if self.domain_guard is None:
            return
        ok = np.asarray(self.domain_guard(x), dtype=bool)
        if not np.all(ok):
            bad = np.asarray(x)[~np.broadcast_to(ok, x.shape[:-1])]
            raise DomainError(f"{self.name}: {len(bad)} point(s) outside domain, e.g. {bad[0].tolist()}")

    def inside(self, x) -> Array:
        x = _as_points(x, 3)
        if self.domain_guard is None:
            return np.ones(x.shape[:-1], dtype=bool)
        return np.broadcast_to(np.asarray(self.domain_guard(x), dtype=bool), x.shape[:-1])

    def __call__(self, x) -> Array:
        x = _as_points(x, 3)
        self.check_domain(x)
        return np.broadcast_to(np.asarray(self.eval(x), dtype=float), x.shape)

    def jac(self, x) -> Array:
        x = _as_points(x, 3)
        if self.jacobian is not None:
            self.check_domain(x)
            return np.broadcast_to(np.asarray(self.jacobian(x), dtype=float), x.shape + (3,))
        return central_difference(self.__call__, x)

    def curl(self, x) -> Array:
        return curl_from_jacobian(self.jac(x))

    def divergence(self, x) -> Array:
        return np.trace(self.jac(x), axis1=-2, axis2=-1)


def curl_from_jacobian(jw: Array) -> Array:
    return np.stack(
        [jw[..., 2, 1] - jw[..., 1, 2], jw[..., 0, 2] - jw[..., 2, 0], jw[..., 1, 0] - jw[..., 0, 1]],
        axis=-1,
    )


def _check_dims(J: AntisymOperator, *fields: ScalarField) -> None:
    for f in fields:
        if f.dimension != J.dimension:
            raise DimensionError(f"{J.name} is {J.dimension}-dimensional but {f.name} is {f.dimension}-dimensional")


# -- R^3 identification ----------------------------------------------------


def _hat(v: Array, trailing: int = 0) -> Array:
    """Antisymmetric J^{ij} = -eps_{ijm} v_m for a batch of 3-vectors.

    The vector index of ``v`` sits ``trailing`` axes before the end; those
    trailing axes are carried through after (i, j).
    """
    lead = v.shape[: v.ndim - 1 - trailing]
    tail = v.shape[v.ndim - trailing:]
    out = np.zeros(lead + (3, 3) + tail)
    comp = [v[(Ellipsis, m) + (slice(None),) * trailing] for m in range(3)]
    for i, j, m in ((0, 1, 2), (2, 0, 1), (1, 2, 0)):
        out[(Ellipsis, i, j) + (slice(None),) * trailing] = -comp[m]
        out[(Ellipsis, j, i) + (slice(None),) * trailing] = comp[m]
    return out


def w_to_operator(w: R3VectorField) -> AntisymOperator:
    """Operator with J(dH) = w x grad H."""

    def components(x):
        return _hat(np.asarray(w.eval(x), dtype=float))

    partials = None
    if w.jacobian is not None:

        def partials(x):
            return _hat(np.asarray(w.jacobian(x), dtype=float), trailing=1)

    divergence = None
    if w.jacobian is not None:

        def divergence(x):
            return curl_from_jacobian(np.asarray(w.jacobian(x), dtype=float))

    return AntisymOperator(3, components, partials, name=w.name, domain_guard=w.domain_guard, divergence=divergence)


def operator_to_w(J: AntisymOperator) -> R3VectorField:
    if J.dimension != 3:
        raise DimensionError(f"operator_to_w needs n=3, got n={J.dimension}")

    def evaluate(x):
        M = J.components(x)
        return np.stack([M[..., 2, 1], M[..., 0, 2], M[..., 1, 0]], axis=-1)

    jacobian = None
    if J.partials is not None:

        def jacobian(x):
            P = J.partials(x)
            return np.stack([P[..., 2, 1, :], P[..., 0, 2, :], P[..., 1, 0, :]], axis=-2)

    return R3VectorField(evaluate, jacobian, J.domain_guard, name=J.name)


# -- pointwise geometric quantities --------------------------------------------


def apply_operator(J: AntisymOperator, H: ScalarField, x) -> Array:
    """X^i = J^{ij} H_j."""
    _check_dims(J, H)
    return np.einsum("...ij,...j->...i", J.matrix(x), H.gradient(x))


def bracket(J: AntisymOperator, f: ScalarField, g: ScalarField, x) -> Array:
    """{f, g} = f_i J^{ij} g_j."""
    _check_dims(J, f, g)
    return np.einsum("...i,...ij,...j->...", f.gradient(x), J.matrix(x), g.gradient(x))


def fd_partials(J: AntisymOperator, x, order: int = 4, h=None) -> Array:
    """Central-difference estimate of d_k J^{ij}, exactly antisymmetric in (i, j)."""
    x = _as_points(x, J.dimension)

    def antisym(y):
        C = np.asarray(J.components(y), dtype=float)
        return 0.5 * (C - np.swapaxes(C, -1, -2))

    if J.domain_guard is not None:
        J.check_domain(x)
    return central_difference(antisym, x, h=h, order=order)


def helicity_tensor(J: AntisymOperator, x, partials: Optional[Array] = None) -> Array:
    """Full tensor h^{ijk} = J^{im} d_m J^{jk} + cyclic; shape ``(..., n, n, n)``."""
    M = J.matrix(x)
    P = J.derivatives(x) if partials is None else partials
    T = np.einsum("...im,...jkm->...ijk", M, P)
    return T + np.einsum("...jki->...ijk", T) + np.einsum("...kij->...ijk", T)


def jacobiator(J: AntisymOperator, x) -> dict:
    """Helicity density components h^{ijk} for i < j < k."""
    h = helicity_tensor(J, x)
    return {(i, j, k): h[..., i, j, k] for i, j, k in combinations(range(J.dimension), 3)}


def _check_weight(g: ScalarField, x: Array) -> Array:
    gv = g(x)
    if np.any(np.abs(gv) < MIN_WEIGHT):
        raise ValueError(f"volume weight {g.name} vanishes (|g| < {MIN_WEIGHT}) at some sample")
    return gv


def covorticity_components(J: AntisymOperator, g: ScalarField, x) -> dict:
    """Coefficients g J^{ij}, i < j, of the covorticity form."""
    _check_dims(J, g)
    x = _as_points(x, J.dimension)
    gv = _check_weight(g, x)
    M = J.matrix(x)
    return {(i, j): gv * M[..., i, j] for i, j in combinations(range(J.dimension), 2)}


def cocurrent(J: AntisymOperator, g: ScalarField, x) -> Array:
    """c^j = d_i (g J^{ij})."""
    _check_dims(J, g)
    x = _as_points(x, J.dimension)
    gv = _check_weight(g, x)
    M = J.matrix(x)
    P = J.derivatives(x)
    return np.einsum("...i,...ij->...j", g.gradient(x), M) + gv[..., None] * np.einsum("...iji->...j", P)


def operator_divergence(J: AntisymOperator, x, partials: Optional[Array] = None) -> Array:
    """d_l J^{lj}, the g = 1 cocurrent."""
    if partials is None and J.divergence is not None:
        x = _as_points(x, J.dimension)
        J.check_domain(x)
        return np.broadcast_to(np.asarray(J.divergence(x), dtype=float), x.shape)
    P = J.derivatives(x) if partials is None else partials
    return np.einsum("...lil->...i", P)


def beltrami_residual(J: AntisymOperator, x) -> Array:
    """r^i = J^{ij} d_l J^{lj}; zero exactly when the Beltrami condition holds."""
    x = _as_points(x, J.dimension)
    return np.einsum("...ij,...j->...i", J.matrix(x), operator_divergence(J, x))


def field_charge(J: AntisymOperator, x, h=None) -> Array:
    """Divergence of the Beltrami residual vector (general n)."""
    x = _as_points(x, J.dimension)
    d = central_difference(lambda y: beltrami_residual(J, y), x, h=h)
    return np.trace(d, axis1=-2, axis2=-1)


def field_force_r3(w: R3VectorField, x) -> Array:
    """b = w x (curl w)."""
    x = _as_points(x, 3)
    return np.cross(w(x), w.curl(x))


def field_charge_r3(w: R3VectorField, x, h=None) -> Array:
    """Field charge div(w x curl w), by 4th-order differencing of the field force."""
    x = _as_points(x, 3)
    d = central_difference(lambda y: field_force_r3(w, y), x, h=h)
    return np.trace(d, axis1=-2, axis2=-1)


# -- classification --------------------------------------------------------------


@dataclass(frozen=True)
class ClassificationReport:
    max_jacobiator: float
    max_cocurrent: float
    max_beltrami_residual: float
    max_field_charge: float
    is_poisson: bool
    is_measure_preserving: bool
    is_beltrami: bool
    is_weak_beltrami: bool
    is_nontrivial: bool
    tolerance: float
    sample_count: int

    FLAG_NAMES = ("is_poisson", "is_measure_preserving", "is_beltrami", "is_weak_beltrami", "is_nontrivial")

    def verdicts(self) -> dict:
        return {k: getattr(self, k) for k in self.FLAG_NAMES}

    def to_dict(self) -> dict:
        return asdict(self)

    def rethreshold(self, tol: float) -> "ClassificationReport":
        return verdicts_from_residuals(
            self.max_jacobiator, self.max_cocurrent, self.max_beltrami_residual,
            self.max_field_charge, tol, self.sample_count,
        )


def verdicts_from_residuals(jac, coc, bel, charge, tol, count) -> ClassificationReport:
    is_beltrami = bel <= tol
    return ClassificationReport(
        max_jacobiator=float(jac),
        max_cocurrent=float(coc),
        max_beltrami_residual=float(bel),
        max_field_charge=float(charge),
        is_poisson=bool(jac <= tol),
        is_measure_preserving=bool(coc <= tol),
        is_beltrami=bool(is_beltrami),
        is_weak_beltrami=bool(charge <= tol),
        is_nontrivial=bool(is_beltrami and jac > tol),
        tolerance=float(tol),
        sample_count=int(count),
    )


def classify(J: AntisymOperator, samples, g: Optional[ScalarField] = None, tol: Optional[float] = None) -> ClassificationReport:
    """Max-over-samples residuals and verdicts for the operator classes.

    ``tol`` defaults to 1e-8 with analytic partials and 1e-5 otherwise.
    """
    x = _as_points(samples, J.dimension).reshape(-1, J.dimension)
    if len(x) == 0:
        raise ValueError("classify needs at least one sample point")
    J.check_domain(x)
    if g is None:
        g = ScalarField.constant(1.0, J.dimension)
    _check_dims(J, g)
    if tol is None:
        tol = TOL_ANALYTIC if J.has_analytic_partials else TOL_FINITE_DIFFERENCE

    P = J.derivatives(x)
    h = helicity_tensor(J, x, partials=P)
    max_jac = float(np.max(np.abs(h))) if J.dimension >= 3 else 0.0
    max_coc = float(np.max(np.linalg.norm(cocurrent(J, g, x), axis=-1)))
    r = np.einsum("...ij,...j->...i", J.matrix(x), operator_divergence(J, x, partials=P))
    max_bel = float(np.max(np.linalg.norm(r, axis=-1)))
    max_charge = float(np.max(np.abs(field_charge(J, x))))
    return verdicts_from_residuals(max_jac, max_coc, max_bel, max_charge, tol, len(x))


def sobol_box(lower, upper, count: int = 1000, seed: int = 0, guard=None, scramble: bool = True) -> Array:
    """Low-discrepancy points in a box, dropping those that fail ``guard``.

    Draws in powers of two until ``count`` accepted points are available.
    """
    from scipy.stats import qmc

    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    sampler = qmc.Sobol(d=len(lower), scramble=scramble, seed=seed)
    m = max(1, int(np.ceil(np.log2(max(count, 2)))))
    accepted = np.empty((0, len(lower)))
    for _ in range(8):
        pts = qmc.scale(sampler.random_base2(m), lower, upper)
        if guard is not None:
            pts = pts[np.asarray(guard(pts), dtype=bool)]
        accepted = np.concatenate([accepted, pts])
        if len(accepted) >= count:
            return accepted[:count]
    raise ValueError("domain guard rejects too many points in the sampling box")
