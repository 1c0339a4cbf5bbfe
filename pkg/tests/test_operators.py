import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from beltrami import catalog
from beltrami.errors import DimensionError, DomainError, StepSizeError
from beltrami.operators import (AntisymOperator, R3VectorField, ScalarField, apply_operator, beltrami_residual,
                                bracket, classify, cocurrent, covorticity_components, fd_partials,
                                field_charge_r3, field_force_r3, helicity_tensor, jacobiator, operator_divergence,
                                operator_to_w, sobol_box, w_to_operator)


def linear_field(c, A):
    """w(x) = c + A x with constant Jacobian A."""
    c, A = np.asarray(c, float), np.asarray(A, float)
    return R3VectorField(lambda x: c + x @ A.T, lambda x: np.broadcast_to(A, x.shape + (3,)).copy(), name="affine")


def polynomial_operator(n, seed):
    """J^{ij} = A + B_k x_k + C_k x_k^2 with antisymmetric A, B_k, C_k."""
    r = np.random.default_rng(seed)

    def anti(*shape):
        M = r.normal(size=shape + (n, n))
        return M - np.swapaxes(M, -1, -2)

    A, B, C = anti(), anti(n), anti(n)

    def comps(x):
        return A + np.einsum("...k,kij->...ij", x, B) + np.einsum("...k,kij->...ij", x * x, C)

    def parts(x):
        return np.einsum("kij->ijk", B) + np.einsum("...k,kij->...ijk", 2 * x, C)

    return AntisymOperator(n, comps, parts, name=f"poly{n}")


def brute_force_helicity(J, x):
    """Loop over (i, j, k, m) at a single point."""
    M, P = J.matrix(x), J.derivatives(x)
    n = J.dimension
    h = np.zeros((n, n, n))
    for i, j, k in itertools.product(range(n), repeat=3):
        s = 0.0
        for m in range(n):
            s += M[i, m] * P[j, k, m] + M[j, m] * P[k, i, m] + M[k, m] * P[i, j, m]
        h[i, j, k] = s
    return h


B1 = catalog.get_entry("b1-classical")
NB = catalog.get_entry("nb-simple")
B5 = catalog.get_entry("b5-weak")
finite = st.floats(-3, 3, allow_nan=False)
point3 = arrays(np.float64, 3, elements=finite)


class TestApplyOperator:
    def test_b1_with_h_equal_z(self):
        X = apply_operator(B1.operator, ScalarField.coordinate(2, 3), np.zeros(3))
        np.testing.assert_allclose(X, [1.0, 0.0, 0.0], atol=1e-15)

    def test_constant_hamiltonian_gives_zero(self):
        X = apply_operator(B1.operator, ScalarField.constant(2.0, 3), np.ones((5, 3)))
        assert np.all(X == 0)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            apply_operator(B1.operator, ScalarField.coordinate(0, 4), np.zeros(3))

    def test_domain_guard_violation(self):
        with pytest.raises(DomainError):
            apply_operator(B5.operator, ScalarField.coordinate(0, 3), np.array([0.0, 0.1, 1.0]))

    @given(seed=st.integers(0, 10_000), x=arrays(np.float64, 4, elements=finite))
    def test_hamiltonian_is_conserved(self, seed, x):
        J = polynomial_operator(4, seed)
        r = np.random.default_rng(seed)
        a, b = r.normal(size=4), r.normal(size=4)
        H = ScalarField(4, lambda y: np.sin(y @ a) + y @ b, lambda y: np.cos(y @ a)[..., None] * a + b)
        X = apply_operator(J, H, x)
        scale = np.linalg.norm(X) * np.linalg.norm(H.gradient(x)) + 1e-300
        assert abs(np.dot(H.gradient(x), X)) <= 1e-12 * max(scale, 1.0)

    @given(c=point3, x=point3, g=point3)
    def test_matches_cross_product(self, c, x, g):
        w = linear_field(c, np.eye(3) * 0.5)
        H = ScalarField(3, lambda y: y @ g, lambda y: np.broadcast_to(g, y.shape))
        np.testing.assert_allclose(apply_operator(w_to_operator(w), H, x), np.cross(w(x), g), atol=1e-12)


class TestBracket:
    def test_constant_w_triple_product(self):
        # grad f . (w x grad g) = -w . (grad f x grad g) with J(dH) = w x grad H
        J = w_to_operator(linear_field([1, 0, 0], np.zeros((3, 3))))
        f, g = ScalarField.coordinate(1, 3), ScalarField.coordinate(2, 3)
        assert bracket(J, f, g, np.array([0.3, -1.0, 2.0])) == pytest.approx(-1.0)

    @given(seed=st.integers(0, 10_000), x=arrays(np.float64, 4, elements=finite))
    def test_antisymmetry(self, seed, x):
        J = polynomial_operator(4, seed)
        r = np.random.default_rng(seed + 1)
        a, b = r.normal(size=4), r.normal(size=4)
        f = ScalarField(4, lambda y: np.sin(y @ a), lambda y: np.cos(y @ a)[..., None] * a)
        g = ScalarField(4, lambda y: (y @ b) ** 2, lambda y: 2 * (y @ b)[..., None] * b)
        assert bracket(J, f, f, x) == pytest.approx(0.0, abs=1e-9)
        assert bracket(J, f, g, x) == pytest.approx(-bracket(J, g, f, x), rel=1e-12, abs=1e-12)


class TestJacobiator:
    def test_constant_operator_is_poisson(self):
        M = np.array([[0, 1, 2, 0], [-1, 0, 3, 1], [-2, -3, 0, 4], [0, -1, -4, 0]], float)
        h = jacobiator(AntisymOperator.constant(M), np.ones((3, 4)))
        assert all(np.all(v == 0) for v in h.values())

    def test_b1_helicity(self):
        x = sobol_box(*B1.box, count=64)
        h = jacobiator(B1.operator, x)[(0, 1, 2)]
        # h^{xyz} = -w.curl w = -1 for this identification
        np.testing.assert_allclose(np.abs(h), 1.0, atol=1e-12)
        w = B1.field
        np.testing.assert_allclose(h, -np.sum(w(x) * w.curl(x), axis=-1), atol=1e-12)

    @pytest.mark.parametrize("n,seed", [(3, 0), (4, 1), (5, 2)])
    def test_brute_force_triple_sum(self, n, seed):
        J = polynomial_operator(n, seed)
        for x in np.random.default_rng(seed).normal(size=(5, n)):
            np.testing.assert_allclose(helicity_tensor(J, x), brute_force_helicity(J, x), atol=1e-10)

    @given(seed=st.integers(0, 10_000))
    def test_total_antisymmetry(self, seed):
        J = polynomial_operator(4, seed)
        x = np.random.default_rng(seed).normal(size=4)
        h = helicity_tensor(J, x)
        for perm in itertools.permutations(range(3)):
            sign = np.linalg.det(np.eye(3)[list(perm)])
            np.testing.assert_allclose(np.transpose(h, perm), sign * h, atol=1e-10)

    def test_r3_duality_every_catalog_field(self):
        for name in catalog.names():
            e = catalog.get_entry(name)
            x = e.samples(100)
            h = jacobiator(e.operator, x)[(0, 1, 2)]
            np.testing.assert_allclose(-h, np.sum(e.field(x) * e.field.curl(x), axis=-1), atol=1e-8, err_msg=name)


class TestCocurrent:
    one = ScalarField.constant(1.0, 3)

    def test_gradient_field_has_zero_cocurrent(self):
        J = w_to_operator(linear_field([1, 0, 0], np.zeros((3, 3))))
        assert np.all(cocurrent(J, self.one, np.ones((4, 3))) == 0)

    def test_b1_equals_curl(self):
        x = sobol_box(*B1.box, count=50)
        c = cocurrent(B1.operator, self.one, x)
        np.testing.assert_allclose(c, B1.field.curl(x), atol=1e-12)
        np.testing.assert_allclose(c, B1.field(x), atol=1e-12)

    def test_sign_matches_finite_differences(self):
        x = sobol_box(*B1.box, count=20)
        J = AntisymOperator(3, B1.operator.components)  # no analytic partials
        np.testing.assert_allclose(cocurrent(J, self.one, x), B1.field.curl(x), atol=1e-8)

    def test_weighted_constant_product(self):
        # g J constant: J = w_hat(c) / g with g = exp(x)
        g = ScalarField(3, lambda y: np.exp(y[..., 0]), lambda y: np.stack(
            [np.exp(y[..., 0]), 0 * y[..., 0], 0 * y[..., 0]], axis=-1))
        c = np.array([0.3, -0.2, 0.7])
        w = R3VectorField(lambda y: np.exp(-y[..., :1]) * c,
                          lambda y: np.einsum("...,i,j->...ij", -np.exp(-y[..., 0]), c, [1, 0, 0]))
        out = cocurrent(w_to_operator(w), g, np.random.default_rng(0).normal(size=(10, 3)))
        np.testing.assert_allclose(out, 0.0, atol=1e-12)

    def test_operator_divergence_shortcut_matches_partials(self):
        x = NB.samples(30)
        J = NB.operator
        np.testing.assert_allclose(operator_divergence(J, x), operator_divergence(J, x, J.derivatives(x)), atol=1e-14)


class TestCovorticity:
    def test_identity_weight_is_upper_triangle(self):
        x = np.random.default_rng(1).normal(size=(6, 3))
        comps = covorticity_components(B1.operator, ScalarField.constant(1.0, 3), x)
        M = B1.operator.matrix(x)
        for (i, j), v in comps.items():
            np.testing.assert_array_equal(v, M[..., i, j])

    def test_linear_in_weight(self):
        x = np.random.default_rng(2).normal(size=(6, 3))
        a = covorticity_components(B1.operator, ScalarField.constant(1.0, 3), x)
        b = covorticity_components(B1.operator, ScalarField.constant(2.0, 3), x)
        for k in a:
            np.testing.assert_array_equal(b[k], 2 * a[k])

    def test_zero_weight_rejected(self):
        with pytest.raises(ValueError):
            covorticity_components(B1.operator, ScalarField.constant(0.0, 3), np.zeros((1, 3)))

    def test_nb2_rescaled_has_b3_pattern(self):
        e = catalog.get_entry("nb2-family")
        x = e.samples(50)
        g = e.weight
        comps = covorticity_components(e.operator, g, x)
        gw = np.stack([comps[(1, 2)] * -1, comps[(0, 2)], -comps[(0, 1)]], axis=-1)
        sigma = np.arctan(x[..., 2])
        # theta = z, psi = y, ell = x: cos(sigma) grad psi + sin(sigma) grad ell
        expected = np.stack([np.sin(sigma), np.cos(sigma), 0 * sigma], axis=-1)
        np.testing.assert_allclose(gw, expected, atol=1e-12)


class TestBeltramiResidual:
    def test_b1_vanishes(self):
        r = beltrami_residual(B1.operator, sobol_box(*B1.box, count=200))
        assert np.max(np.abs(r)) <= 1e-14

    def test_nb_simple_nonzero(self):
        r = beltrami_residual(NB.operator, np.array([0.0, 1.0, 0.0]))
        assert np.linalg.norm(r) > 0.5
        np.testing.assert_allclose(field_force_r3(NB.field, np.array([0.0, 1.0, 0.0])), [0, 1, 0], atol=1e-15)

    def test_constant_operator(self):
        J = AntisymOperator.constant(np.array([[0, 1.0, 0], [-1, 0, 2], [0, -2, 0]]))
        assert np.all(beltrami_residual(J, np.ones((3, 3))) == 0)

    def test_matches_field_force(self):
        for name in ("nb-simple", "b5-weak", "nb2-family"):
            e = catalog.get_entry(name)
            x = e.samples(50)
            np.testing.assert_allclose(beltrami_residual(e.operator, x), field_force_r3(e.field, x), atol=1e-12)


class TestFieldForceCharge:
    def test_b1_force_zero(self):
        assert np.max(np.abs(field_force_r3(B1.field, sobol_box(*B1.box, count=64)))) < 1e-14

    def test_weak_beltrami_force(self):
        np.testing.assert_allclose(field_force_r3(B5.field, np.array([0.0, 2.0, 1.0])), [-np.sqrt(2), 2, -1],
                                   atol=1e-14)

    def test_nb_simple_force(self):
        for y in (-2.0, 0.5, 3.0):
            np.testing.assert_allclose(field_force_r3(NB.field, np.array([0.0, y, 0.0])), [0, y, 0], atol=1e-15)

    def test_nb_simple_charge_is_one(self):
        np.testing.assert_allclose(field_charge_r3(NB.field, NB.samples(100)), 1.0, atol=1e-8)

    def test_weak_beltrami_charge_zero(self):
        assert np.max(np.abs(field_charge_r3(B5.field, B5.samples(200)))) <= 1e-6

    def test_guard_violation(self):
        with pytest.raises(DomainError):
            field_force_r3(B5.field, np.array([0.0, 0.0, 1.0]))

    def test_beltrami_catalog_charge_zero(self):
        for name in ("b1-classical", "b2-sigma", "b3-orthogonal", "exp-beltrami", "b3-dual"):
            e = catalog.get_entry(name)
            assert np.max(np.abs(field_charge_r3(e.field, e.samples(100)))) <= 1e-6, name


class TestClassify:
    def test_b1(self):
        rep = classify(B1.operator, B1.samples(1000), tol=1e-8)
        assert rep.is_beltrami and rep.is_nontrivial and not rep.is_poisson and not rep.is_measure_preserving
        assert rep.sample_count == 1000

    def test_nb_simple(self):
        rep = classify(NB.operator, NB.samples(500), tol=1e-8)
        assert not rep.is_beltrami and not rep.is_weak_beltrami
        assert rep.max_field_charge == pytest.approx(1.0, abs=1e-6)

    def test_constant(self):
        J = AntisymOperator.constant(np.array([[0, 1.0, 0], [-1, 0, 2], [0, -2, 0]]))
        rep = classify(J, np.random.default_rng(0).normal(size=(20, 3)))
        assert rep.is_poisson and rep.is_measure_preserving and rep.is_beltrami and not rep.is_nontrivial

    def test_empty_samples(self):
        with pytest.raises(ValueError):
            classify(B1.operator, np.zeros((0, 3)))

    def test_default_tolerances(self):
        assert classify(B1.operator, B1.samples(10)).tolerance == 1e-8
        assert classify(AntisymOperator(3, B1.operator.components), B1.samples(10)).tolerance == 1e-5

    @given(tol=st.floats(1e-16, 1.0), shrink=st.floats(1e-6, 1.0))
    def test_shrinking_tolerance_never_adds_true(self, tol, shrink):
        base = classify(B5.operator, B5.samples(50), tol=tol)
        tighter = base.rethreshold(tol * shrink)
        for k, v in tighter.verdicts().items():
            if k != "is_nontrivial":
                assert not (v and not base.verdicts()[k])
        assert (not tighter.is_nontrivial) or tighter.is_beltrami
        assert (not tighter.is_beltrami) or tighter.is_weak_beltrami or tighter.max_field_charge > tighter.tolerance


class TestPartials:
    def test_linear_component_exact(self):
        def comps(x):
            M = np.zeros(x.shape + (3,))
            M[..., 0, 2], M[..., 2, 0] = x[..., 1], -x[..., 1]
            return M

        P = fd_partials(AntisymOperator(3, comps), np.array([0.4, 0.7, -1.0]), order=2, h=1e-3)
        assert P[0, 2, 1] == pytest.approx(1.0, abs=1e-12)

    def test_b1_order4(self):
        J = B1.operator
        P = fd_partials(J, np.zeros(3), order=4, h=1e-3)
        np.testing.assert_allclose(P, J.derivatives(np.zeros(3)), atol=1e-9)

    def test_constant_zero(self):
        J = AntisymOperator.constant(np.array([[0, 1.0, 0], [-1, 0, 2], [0, -2, 0]]))
        assert np.all(fd_partials(J, np.ones(3)) == 0)

    def test_step_underflow(self):
        with pytest.raises(StepSizeError):
            fd_partials(B1.operator, np.zeros(3), h=1e-14)

    def test_exact_antisymmetry(self):
        P = fd_partials(B1.operator, np.random.default_rng(0).normal(size=(5, 3)))
        np.testing.assert_array_equal(P, -np.swapaxes(P, -2, -3))

    def test_catalog_analytic_vs_finite_difference(self):
        for name in catalog.names():
            e = catalog.get_entry(name)
            x = e.samples(100, seed=3)
            A = e.operator.derivatives(x)
            F = fd_partials(e.operator, x, order=4, h=1e-4)
            scale = np.maximum(np.abs(A).max(axis=(-1, -2, -3), keepdims=True), 1.0)
            assert np.max(np.abs(A - F) / scale) <= 1e-6, name


class TestIdentification:
    def test_unit_z(self):
        J = w_to_operator(linear_field([0, 0, 1], np.zeros((3, 3))))
        M = J.matrix(np.zeros(3))
        assert (M[0, 1], M[0, 2], M[1, 2]) == (-1.0, 0.0, 0.0)

    @given(c=point3, x=point3, seed=st.integers(0, 1000))
    def test_round_trip(self, c, x, seed):
        A = np.random.default_rng(seed).normal(size=(3, 3))
        w = linear_field(c, A)
        back = operator_to_w(w_to_operator(w))
        np.testing.assert_array_equal(back(x), w(x))
        np.testing.assert_array_equal(back.jac(x), w.jac(x))

    def test_operator_to_w_needs_three_dimensions(self):
        with pytest.raises(DimensionError):
            operator_to_w(polynomial_operator(4, 0))

    def test_antisymmetry_of_catalog_operators(self):
        for name in catalog.names():
            e = catalog.get_entry(name)
            M = e.operator.matrix(e.samples(100))
            assert np.all(M + np.swapaxes(M, -1, -2) == 0), name

    def test_non_antisymmetric_components_rejected(self):
        J = AntisymOperator(3, lambda x: np.ones(x.shape + (3,)))
        with pytest.raises(ValueError):
            J.matrix(np.zeros(3))
