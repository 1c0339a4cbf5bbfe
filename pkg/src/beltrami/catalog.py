"""Closed-form Beltrami, weak-Beltrami and non-Beltrami fields in R^3.

Every entry carries an analytic Jacobian, a domain guard where the field is
singular, a default sampling box and the classification it is expected to
produce.  Entries are addressable by name through :func:`get_entry`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .operators import R3VectorField, ScalarField, sobol_box, w_to_operator

TWO_PI = 2.0 * np.pi
GUARD_MARGIN = 1e-6

BELTRAMI = dict(is_poisson=False, is_measure_preserving=False, is_beltrami=True,
                is_weak_beltrami=True, is_nontrivial=True)
WEAK = dict(is_poisson=False, is_measure_preserving=False, is_beltrami=False,
            is_weak_beltrami=True, is_nontrivial=False)
NON_BELTRAMI = dict(is_poisson=False, is_measure_preserving=False, is_beltrami=False,
                    is_weak_beltrami=False, is_nontrivial=False)


@dataclass(frozen=True)
class Profile:
    """A smooth function of one variable with its derivative."""

    value: Callable
    derivative: Callable
    name: str = "u"

    def __call__(self, t):
        return self.value(t)

    @classmethod
    def identity(cls) -> "Profile":
        return cls(lambda t: t, lambda t: np.ones_like(t), "t")

    @classmethod
    def linear(cls, slope: float, offset: float = 0.0) -> "Profile":
        return cls(lambda t: slope * t + offset, lambda t: np.full_like(t, slope), f"{slope:g}t+{offset:g}")

    @classmethod
    def constant(cls, c: float) -> "Profile":
        return cls(lambda t: np.full_like(t, c), lambda t: np.zeros_like(t), f"{c:g}")


@dataclass(frozen=True)
class OrthogonalCoords:
    """Orthogonal coordinates (ell, psi, theta) with |grad ell| = |grad psi|."""

    ell: ScalarField
    psi: ScalarField
    theta: ScalarField
    name: str = "coords"
    domain_guard: Optional[Callable] = None

    def validate(self, x, tol: float = 1e-10) -> float:
        """Largest violation of orthogonality, equal norms and right-handedness.

        Raises ``ValueError`` when it exceeds ``tol`` (relative to the
        gradient magnitudes).
        """
        gl, gp, gt = self.ell.gradient(x), self.psi.gradient(x), self.theta.gradient(x)
        scale = np.maximum(np.linalg.norm(gl, axis=-1) * np.linalg.norm(gt, axis=-1), 1e-300)
        dots = [np.einsum("...i,...i", a, b) for a, b in ((gl, gp), (gl, gt), (gp, gt))]
        worst = max(float(np.max(np.abs(d) / scale)) for d in dots)
        nl, npsi = np.sum(gl * gl, axis=-1), np.sum(gp * gp, axis=-1)
        worst = max(worst, float(np.max(np.abs(nl - npsi) / np.maximum(nl, 1e-300))))
        if worst > tol:
            raise ValueError(f"{self.name}: not an orthogonal system with |grad ell| = |grad psi| (violation {worst:.2e})")
        orientation = np.einsum("...i,...i", gl, np.cross(gp, gt))
        if np.any(orientation <= 0):
            raise ValueError(f"{self.name}: coordinates are not right-handed")
        return worst


@dataclass(frozen=True)
class CatalogEntry:
    name: str
    field: R3VectorField
    expected_class: dict
    proportionality: Optional[ScalarField] = None
    equilibrium: Optional[ScalarField] = None
    weight: Optional[ScalarField] = None
    notes: str = ""
    box: tuple = ((0.0, 0.0, 0.0), (TWO_PI, TWO_PI, TWO_PI))
    coords: Optional[OrthogonalCoords] = None
    params: dict = field(default_factory=dict)
    periodic: tuple = (False, False, False)  # axes on which the field repeats with the box extent

    @property
    def operator(self):
        return w_to_operator(self.field)

    def samples(self, count: int = 1000, seed: int = 0):
        return sobol_box(self.box[0], self.box[1], count, seed=seed, guard=self.field.domain_guard)


# -- coordinate systems ----------------------------------------------------------


def _zero_hessian(x):
    return np.zeros(x.shape + (3,))


def cartesian_coords(order=(0, 1, 2)) -> OrthogonalCoords:
    """(ell, psi, theta) = (x_a, x_b, x_c) for a right-handed permutation."""
    fields = [ScalarField.coordinate(a, 3, "xyz"[a]) for a in order]
    coords = OrthogonalCoords(*fields, name="cartesian" + "".join("xyz"[a] for a in order))
    coords.validate(np.eye(3))
    return coords


def _unit_radial(x):
    rho = np.linalg.norm(x, axis=-1)
    return rho, x / rho[..., None]


def _sqrt_field(sign: float, name: str) -> ScalarField:
    """sqrt(rho + sign*z), one of the parabolic coordinates."""

    def value(x):
        rho = np.linalg.norm(x, axis=-1)
        return np.sqrt(rho + sign * x[..., 2])

    def grad(x):
        rho, n = _unit_radial(x)
        s = rho + sign * x[..., 2]
        ds = n.copy()
        ds[..., 2] += sign
        return ds / (2.0 * np.sqrt(s))[..., None]

    def hessian(x):
        rho, n = _unit_radial(x)
        s = rho + sign * x[..., 2]
        ds = n.copy()
        ds[..., 2] += sign
        eye = np.broadcast_to(np.eye(3), x.shape + (3,))
        hrho = (eye - n[..., :, None] * n[..., None, :]) / rho[..., None, None]
        sq = np.sqrt(s)[..., None, None]
        return hrho / (2.0 * sq) - ds[..., :, None] * ds[..., None, :] / (4.0 * sq ** 3)

    return ScalarField(3, value, grad, name, hessian)


def _azimuth() -> ScalarField:
    def value(x):
        return np.arctan2(x[..., 1], x[..., 0])

    def grad(x):
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        return np.stack([-x[..., 1] / r2, x[..., 0] / r2, np.zeros_like(r2)], axis=-1)

    def hessian(x):
        X, Y = x[..., 0], x[..., 1]
        r4 = (X * X + Y * Y) ** 2
        H = np.zeros(x.shape + (3,))
        H[..., 0, 0] = 2 * X * Y / r4
        H[..., 1, 1] = -2 * X * Y / r4
        H[..., 0, 1] = H[..., 1, 0] = (Y * Y - X * X) / r4
        return H

    return ScalarField(3, value, grad, "theta", hessian)


def parabolic_guard(margin: float = GUARD_MARGIN):
    """Away from the z axis and from the branch cut of the azimuth on x < 0."""

    def guard(x):
        x = np.asarray(x, dtype=float)
        r2 = x[..., 0] ** 2 + x[..., 1] ** 2
        off_cut = (x[..., 0] > 0) | (np.abs(x[..., 1]) > margin)
        return (r2 > margin) & off_cut

    return guard


def parabolic_coords(margin: float = GUARD_MARGIN) -> OrthogonalCoords:
    """(sqrt(rho + z), sqrt(rho - z), atan2(y, x)) with rho = |x|."""
    return OrthogonalCoords(_sqrt_field(+1.0, "ell"), _sqrt_field(-1.0, "psi"), _azimuth(),
                            name="parabolic", domain_guard=parabolic_guard(margin))


# -- generic constructions ---------------------------------------------------------


def _combination_field(coords: OrthogonalCoords, a_psi, a_ell, name: str) -> R3VectorField:
    """w = A(theta) grad psi + B(theta) grad ell, given profiles for A and B."""

    def value(x):
        t = coords.theta(x)
        return a_psi.value(t)[..., None] * coords.psi.gradient(x) + a_ell.value(t)[..., None] * coords.ell.gradient(x)

    def jacobian(x):
        t = coords.theta(x)
        gp, gl, gt = coords.psi.gradient(x), coords.ell.gradient(x), coords.theta.gradient(x)
        A, B = a_psi.value(t)[..., None, None], a_ell.value(t)[..., None, None]
        dA, dB = a_psi.derivative(t), a_ell.derivative(t)
        outer = (dA[..., None] * gp + dB[..., None] * gl)[..., :, None] * gt[..., None, :]
        return A * coords.psi.hess(x) + B * coords.ell.hess(x) + outer

    return R3VectorField(value, jacobian, coords.domain_guard, name)


def _compose(outer: Callable, outer_d: Callable, u: Profile, name: str) -> Profile:
    return Profile(lambda t: outer(u.value(t)), lambda t: outer_d(u.value(t)) * u.derivative(t), name)


def _theta_rate(coords: OrthogonalCoords, u: Profile, sign: float, name: str) -> ScalarField:
    def value(x):
        t = coords.theta(x)
        return sign * u.derivative(t) * np.linalg.norm(coords.theta.gradient(x), axis=-1)

    return ScalarField(3, value, None, name)


# -- catalog entries ------------------------------------------------------------------


def classical_beltrami() -> CatalogEntry:
    """w = sin z grad x + cos z grad y, curl w = w."""
    entry = sigma_beltrami(Profile.identity())
    return CatalogEntry("b1-classical", entry.field, BELTRAMI, entry.proportionality,
                        notes="curl w = w, div w = 0, |w| = 1", periodic=(True, True, True))


def sigma_beltrami(sigma: Optional[Profile] = None) -> CatalogEntry:
    """w = sin(sigma(z)) grad x + cos(sigma(z)) grad y, curl w = sigma'(z) w."""
    periodic = (True, True, sigma is None)
    sigma = sigma or Profile.linear(2.0)

    def value(x):
        s = sigma.value(x[..., 2])
        return np.stack([np.sin(s), np.cos(s), np.zeros_like(s)], axis=-1)

    def jacobian(x):
        z = x[..., 2]
        s, ds = sigma.value(z), sigma.derivative(z)
        J = np.zeros(x.shape + (3,))
        J[..., 0, 2] = np.cos(s) * ds
        J[..., 1, 2] = -np.sin(s) * ds
        return J

    w = R3VectorField(value, jacobian, None, f"sigma-beltrami[{sigma.name}]")
    h = ScalarField(3, lambda x: sigma.derivative(x[..., 2]), None, "sigma_z")
    return CatalogEntry("b2-sigma", w, BELTRAMI, h, notes="curl w = sigma_z w", params={"sigma": sigma.name},
                        periodic=periodic)


def orthogonal_beltrami(coords: Optional[OrthogonalCoords] = None, u: Optional[Profile] = None,
                        box=None, name: str = "b3-orthogonal") -> CatalogEntry:
    """w = cos u grad psi + sin u grad ell, curl w = u_theta |grad theta| w."""
    periodic = (True, True, True) if coords is None and u is None and box is None else (False, False, False)
    coords = coords or cartesian_coords()
    u = u or Profile.identity()
    w = _combination_field(
        coords,
        _compose(np.cos, lambda s: -np.sin(s), u, "cos u"),
        _compose(np.sin, np.cos, u, "sin u"),
        f"{name}[{coords.name}]",
    )
    h = _theta_rate(coords, u, +1.0, "u_theta|grad theta|")
    kwargs = {} if box is None else {"box": box}
    return CatalogEntry(name, w, BELTRAMI, h, coords=coords, notes="curl w = u_theta |grad theta| w",
                        periodic=periodic, **kwargs)


def parabolic_beltrami(margin: float = GUARD_MARGIN) -> CatalogEntry:
    """Parabolic-coordinate field with proportionality 1/sqrt(x^2 + y^2)."""
    entry = orthogonal_beltrami(parabolic_coords(margin), Profile.identity(),
                                box=((0.2, -1.0, -1.0), (1.5, 1.0, 1.0)), name="b4-parabolic")
    h = ScalarField(3, lambda x: 1.0 / np.hypot(x[..., 0], x[..., 1]), None, "1/r")
    return CatalogEntry(entry.name, entry.field, BELTRAMI, h, box=entry.box, coords=entry.coords,
                        notes="curl w = w / sqrt(x^2 + y^2); invariants theta, ell cos(theta) - psi sin(theta)")


def exp_beltrami() -> CatalogEntry:
    """Beltrami field with proportionality exp(x + y)."""
    r2 = np.sqrt(2.0)

    def value(x):
        s = np.exp(x[..., 0] + x[..., 1]) / r2
        c = np.cos(s) / r2
        return np.stack([c, -c, np.sin(s)], axis=-1)

    def jacobian(x):
        s = np.exp(x[..., 0] + x[..., 1]) / r2
        dc = -np.sin(s) * s / r2
        dz = np.cos(s) * s
        J = np.zeros(x.shape + (3,))
        J[..., 0, 0] = J[..., 0, 1] = dc
        J[..., 1, 0] = J[..., 1, 1] = -dc
        J[..., 2, 0] = J[..., 2, 1] = dz
        return J

    w = R3VectorField(value, jacobian, None, "exp-beltrami")
    h = ScalarField(3, lambda x: np.exp(x[..., 0] + x[..., 1]), None, "exp(x+y)")
    return CatalogEntry("exp-beltrami", w, BELTRAMI, h, box=((-1.0,) * 3, (1.0,) * 3),
                        notes="curl w = exp(x+y) w, div w = 0")


def weak_beltrami_example(margin: float = GUARD_MARGIN) -> CatalogEntry:
    """w = sqrt(y^2 - 2z^2) grad x + z grad y: nonzero force, zero charge."""

    def guard(x):
        x = np.asarray(x, dtype=float)
        return x[..., 1] ** 2 - 2 * x[..., 2] ** 2 > margin

    def value(x):
        R = np.sqrt(x[..., 1] ** 2 - 2 * x[..., 2] ** 2)
        return np.stack([R, x[..., 2], np.zeros_like(R)], axis=-1)

    def jacobian(x):
        y, z = x[..., 1], x[..., 2]
        R = np.sqrt(y * y - 2 * z * z)
        J = np.zeros(x.shape + (3,))
        J[..., 0, 1] = y / R
        J[..., 0, 2] = -2 * z / R
        J[..., 1, 2] = 1.0
        return J

    w = R3VectorField(value, jacobian, guard, "b5-weak")
    return CatalogEntry("b5-weak", w, WEAK, box=((-1.0, 1.0, -0.5), (1.0, 2.0, 0.5)),
                        notes="b = grad(y^2 - z^2)/2 - zy/sqrt(y^2 - 2z^2) grad x, charge 0")


def nb_family(coords: Optional[OrthogonalCoords] = None, u: Optional[Profile] = None,
              box=None, name: str = "nb2-family") -> CatalogEntry:
    """w = grad psi + u grad ell; g w is Beltrami for g = 1/sqrt(1 + u^2)."""
    coords = coords or cartesian_coords()
    u = u or Profile.identity()
    one = Profile.constant(1.0)
    w = _combination_field(coords, one, u, f"{name}[{coords.name}]")

    def g_value(x):
        t = coords.theta(x)
        return 1.0 / np.sqrt(1.0 + u.value(t) ** 2)

    def g_grad(x):
        t = coords.theta(x)
        uu, du = u.value(t), u.derivative(t)
        return (-uu * du / (1.0 + uu ** 2) ** 1.5)[..., None] * coords.theta.gradient(x)

    g = ScalarField(3, g_value, g_grad, "1/sqrt(1+u^2)")
    kwargs = {"box": ((-1.0,) * 3, (1.0,) * 3)} if box is None else {"box": box}
    return CatalogEntry(name, w, NON_BELTRAMI, equilibrium=g, weight=g, coords=coords,
                        notes="g w satisfies the Beltrami condition with g = 1/sqrt(1+u^2)", **kwargs)


def nb_simple() -> CatalogEntry:
    """w = grad x + y grad z; b = y grad y, charge 1, equilibrium 1/sqrt(1 + y^2)."""

    def value(x):
        one = np.ones_like(x[..., 0])
        return np.stack([one, np.zeros_like(one), x[..., 1]], axis=-1)

    def jacobian(x):
        J = np.zeros(x.shape + (3,))
        J[..., 2, 1] = 1.0
        return J

    def f_value(x):
        return 1.0 / np.sqrt(1.0 + x[..., 1] ** 2)

    def f_grad(x):
        y = x[..., 1]
        g = np.zeros(x.shape)
        g[..., 1] = -y / (1.0 + y * y) ** 1.5
        return g

    def f_hess(x):
        y = x[..., 1]
        H = np.zeros(x.shape + (3,))
        H[..., 1, 1] = (2 * y * y - 1) / (1.0 + y * y) ** 2.5
        return H

    w = R3VectorField(value, jacobian, None, "nb-simple")
    f = ScalarField(3, f_value, f_grad, "1/sqrt(1+y^2)", f_hess)
    return CatalogEntry("nb-simple", w, NON_BELTRAMI, equilibrium=f, weight=f,
                        box=((0.0, -3.0, 0.0), (TWO_PI, 3.0, TWO_PI)),
                        coords=cartesian_coords((2, 0, 1)),
                        notes="b = y grad y, charge 1", periodic=(True, False, True))


def dual_field(coords: Optional[OrthogonalCoords] = None, u: Optional[Profile] = None,
               box=None, name: str = "b3-dual") -> CatalogEntry:
    """w* = sin u grad psi + cos u grad ell, curl w* = -u_theta |grad theta| w*."""
    periodic = (True, True, True) if coords is None and u is None and box is None else (False, False, False)
    coords = coords or cartesian_coords()
    u = u or Profile.identity()
    w = _combination_field(
        coords,
        _compose(np.sin, np.cos, u, "sin u"),
        _compose(np.cos, lambda s: -np.sin(s), u, "cos u"),
        f"{name}[{coords.name}]",
    )
    h = _theta_rate(coords, u, -1.0, "-u_theta|grad theta|")
    kwargs = {} if box is None else {"box": box}
    return CatalogEntry(name, w, BELTRAMI, h, coords=coords, notes="opposite proportionality factor",
                        periodic=periodic, **kwargs)


CATALOG = {
    "b1-classical": classical_beltrami,
    "b2-sigma": sigma_beltrami,
    "b3-orthogonal": orthogonal_beltrami,
    "b4-parabolic": parabolic_beltrami,
    "b5-weak": weak_beltrami_example,
    "exp-beltrami": exp_beltrami,
    "nb2-family": nb_family,
    "nb-simple": nb_simple,
    "b3-dual": dual_field,
}


def names() -> list:
    return list(CATALOG)


def get_entry(name: str) -> CatalogEntry:
    try:
        return CATALOG[name]()
    except KeyError:
        raise KeyError(f"unknown field {name!r}; known: {', '.join(CATALOG)}") from None
