import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from beltrami import catalog, kernels
from beltrami.diagnostics import binned_l1, marginal_histogram
from beltrami.errors import DimensionError, SimulationError
from beltrami.expr import parse_expression, preset
from beltrami.operators import R3VectorField, ScalarField, w_to_operator
from beltrami.sde import (DomainSpec, EnsembleState, SdeParams, apply_boundary, deterministic_rk4, drift,
                          gaussian_increments, iterate, noise_amplitude, read_binary, simulate,
                          step_stratonovich_heun, write_binary, write_csv)

B1 = catalog.get_entry("b1-classical")
NB = catalog.get_entry("nb-simple")
BOX = DomainSpec.periodic_box()
COS_X = preset("cos-x")
ZERO = ScalarField.constant(0.0, 3)


def nb_domain():
    return DomainSpec((0.0, -3.0, 0.0), (2 * np.pi, 3.0, 2 * np.pi), ("periodic", "reflecting", "periodic"))


def heun_path(J, H0, x0, dt, steps):
    """Deterministic Heun (D = 0) written out directly."""
    x = np.array(x0, float)

    def a(y):
        return np.einsum("...ij,...j->...i", J.matrix(y), H0.gradient(y))

    for _ in range(steps):
        p = x + dt * a(x)
        x = x + 0.5 * dt * (a(x) + a(p))
    return x


class TestSdeParams:
    @pytest.mark.parametrize("kwargs", [dict(D=-1.0), dict(gamma=-0.1), dict(kappa=-1.0), dict(dt=0.0),
                                        dict(steps=-1), dict(steps=1.5), dict(seed=-1), dict(scheme="rk4")])
    def test_rejects(self, kwargs):
        with pytest.raises(ValueError):
            SdeParams(**kwargs)

    def test_all_errors_reported(self):
        with pytest.raises(ValueError, match="D must.*dt must"):
            SdeParams(D=-1.0, dt=-1.0)

    def test_beta(self):
        assert SdeParams(D=1.0, gamma=0.5).beta == 1.0
        assert SdeParams(D=1.0).beta == 0.0

    @given(D=st.floats(0.01, 10), gamma=st.floats(0.01, 10))
    def test_h_theorem_preset(self, D, gamma):
        p = SdeParams.h_theorem(D, gamma)
        assert p.kappa == D / (2 * gamma)
        assert p.kappa * p.beta == pytest.approx(1.0, rel=1e-15)

    def test_h_theorem_needs_friction(self):
        with pytest.raises(ValueError):
            SdeParams.h_theorem(1.0, 0.0)


class TestDrift:
    def test_cross_product_example(self):
        w = R3VectorField(lambda x: np.stack([np.ones(x.shape[:-1]), 0 * x[..., 0], x[..., 1]], -1))
        J = w_to_operator(w)
        a = drift(J, ScalarField.coordinate(2, 3), SdeParams(), np.zeros(3))
        np.testing.assert_array_equal(a, [0.0, -1.0, 0.0])
        # brute-force matrix product
        M = J.matrix(np.zeros(3))
        assert [sum(M[i, j] * [0, 0, 1][j] for j in range(3)) for i in range(3)] == [0.0, -1.0, 0.0]

    def test_constant_h0_zero(self):
        x = np.random.default_rng(0).normal(size=(20, 3))
        assert np.all(drift(B1.operator, ScalarField.constant(2.0, 3), SdeParams(gamma=0.7), x) == 0)

    def test_kappa_term_b1(self):
        # with J(dH) = w x grad H the kappa term is +kappa curl w = +kappa w for B1
        x = np.random.default_rng(1).normal(size=(20, 3))
        a = drift(B1.operator, ZERO, SdeParams(kappa=0.3), x)
        np.testing.assert_allclose(a, 0.3 * B1.field(x), atol=1e-14)

    def test_friction_term(self):
        # gamma J J g = gamma w x (w x g)
        x = np.random.default_rng(2).normal(size=(20, 3))
        w, g = B1.field(x), COS_X.gradient(x)
        expected = np.cross(w, g) + 0.4 * np.cross(w, np.cross(w, g))
        np.testing.assert_allclose(drift(B1.operator, COS_X, SdeParams(gamma=0.4), x), expected, atol=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            drift(B1.operator, ScalarField.coordinate(0, 2), SdeParams(), np.zeros(3))


class TestNoiseAmplitude:
    def test_zero_diffusion(self):
        assert np.all(noise_amplitude(B1.operator, 0.0, np.ones(3)) == 0)

    @given(seed=st.integers(0, 2**32 - 1))
    def test_orthogonal_to_w(self, seed):
        r = np.random.default_rng(seed)
        x, v = r.normal(size=(10, 3)), r.normal(size=(10, 3))
        for e in (B1, NB):
            kick = np.einsum("...ij,...j->...i", noise_amplitude(e.operator, 1.0, x), v)
            assert np.max(np.abs(np.sum(kick * e.field(x), axis=-1))) <= 1e-12 * (1 + np.abs(x).max() ** 2)

    def test_sqrt_scaling(self):
        x = np.random.default_rng(3).normal(size=(5, 3))
        np.testing.assert_allclose(noise_amplitude(B1.operator, 4.0, x), 2 * noise_amplitude(B1.operator, 1.0, x))


class TestBoundary:
    def test_periodic_wrap(self):
        assert apply_boundary([2 * np.pi + 0.1, 1.0, 1.0], BOX)[0] == pytest.approx(0.1, abs=1e-15)
        assert apply_boundary([-0.1, 1.0, 1.0], BOX)[0] == pytest.approx(2 * np.pi - 0.1, abs=1e-15)

    def test_reflect(self):
        d = DomainSpec((-1.0,), (1.0,), ("reflecting",))
        assert apply_boundary([1.2], d)[0] == pytest.approx(0.8)
        assert apply_boundary([-1.3], d)[0] == pytest.approx(-0.7)

    def test_interior_unchanged(self):
        x = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(apply_boundary(x, nb_domain()), x)

    def test_overshoot_reported(self):
        with pytest.raises(SimulationError, match="particle 0"):
            apply_boundary([3.5], DomainSpec((-1.0,), (1.0,), ("reflecting",)))

    def test_domain_validation(self):
        with pytest.raises(ValueError):
            DomainSpec((0.0,), (0.0,), ("periodic",))
        with pytest.raises(ValueError):
            DomainSpec((0.0,), (1.0,), ("absorbing",))

    @given(seed=st.integers(0, 2**32 - 1))
    def test_result_inside(self, seed):
        d = nb_domain()
        x = np.random.default_rng(seed).uniform([-6, -4.5, -6], [12, 4.5, 12], size=(50, 3))
        assert d.contains(apply_boundary(x, d)).all()


class TestRandomness:
    @given(seed=st.integers(0, 2**64 - 1), step=st.integers(0, 10**6), split=st.integers(1, 63))
    def test_partition_independent(self, seed, step, split):
        ids = np.arange(64, dtype=np.uint64)
        full = gaussian_increments(seed, step, ids, 3)
        parts = np.concatenate([gaussian_increments(seed, step, ids[:split], 3),
                                gaussian_increments(seed, step, ids[split:], 3)])
        np.testing.assert_array_equal(full, parts)
        shuffled = ids[::-1].copy()
        np.testing.assert_array_equal(gaussian_increments(seed, step, shuffled, 3), full[::-1])

    def test_streams_differ(self):
        a = gaussian_increments(1, 0, np.arange(4), 3)
        assert not np.array_equal(a, gaussian_increments(1, 1, np.arange(4), 3))
        assert not np.array_equal(a, gaussian_increments(2, 0, np.arange(4), 3))

    def test_standard_normal_moments(self):
        z = gaussian_increments(7, 3, np.arange(200_000), 3)
        assert abs(z.mean()) <= 5 / np.sqrt(z.size)
        assert abs(z.var() - 1) <= 5 * np.sqrt(2 / z.size)
        assert abs(np.corrcoef(z[:, 0], z[:, 1])[0, 1]) <= 5 / np.sqrt(len(z))


class TestSimulate:
    def test_zero_steps(self):
        s0 = EnsembleState.uniform(BOX, 10, seed=1)
        out = simulate(s0, B1.operator, COS_X, SdeParams(steps=0), BOX)
        assert len(out) == 1
        np.testing.assert_array_equal(out[0].positions, s0.positions)

    def test_snapshot_stride_and_final(self):
        s0 = EnsembleState.uniform(BOX, 10, seed=1)
        out = simulate(s0, B1.operator, COS_X, SdeParams(steps=7, dt=0.01), BOX, snapshot_stride=3)
        assert [s.step for s in out] == [0, 3, 6, 7]
        assert out[-1].time == pytest.approx(0.07)
        assert all(s.count == 10 for s in out)

    def test_deterministic_and_thread_independent(self):
        s0 = EnsembleState.uniform(BOX, 500, seed=4)
        p = SdeParams(D=1.0, gamma=0.5, kappa=1.0, dt=0.01, steps=20, seed=4)
        before = kernels.get_threads()
        try:
            runs = []
            for k in (1, 4):
                kernels.set_threads(k)
                runs.append(simulate(s0, B1.operator, COS_X, p, BOX)[-1].positions)
        finally:
            kernels.set_threads(before)
        np.testing.assert_array_equal(runs[0], runs[1])

    def test_subset_of_particles_reproduced(self):
        s0 = EnsembleState.uniform(BOX, 100, seed=5)
        p = SdeParams(D=1.0, dt=0.01, steps=10, seed=5)
        full = simulate(s0, B1.operator, COS_X, p, BOX)[-1].positions
        sub = EnsembleState(s0.positions[30:60], seed=5, particle_ids=s0.particle_ids[30:60])
        np.testing.assert_array_equal(simulate(sub, B1.operator, COS_X, p, BOX)[-1].positions, full[30:60])

    def test_stays_in_domain(self):
        d = nb_domain()
        s0 = EnsembleState.uniform(d, 2000, seed=6)
        for s in iterate(s0, NB.operator, ZERO, SdeParams(D=1.0, dt=1e-3, steps=50, seed=6), d, 10):
            assert d.contains(s.positions).all()

    def test_initial_outside_rejected(self):
        with pytest.raises(ValueError):
            simulate(EnsembleState(np.full((1, 3), 7.0)), B1.operator, COS_X, SdeParams(steps=1), BOX)

    def test_non_finite_reported(self):
        bad = ScalarField(3, lambda x: x[..., 0], lambda x: np.full(x.shape, np.nan))
        with pytest.raises(SimulationError, match="particle 0 at step 0"):
            simulate(EnsembleState.uniform(BOX, 3), B1.operator, bad, SdeParams(steps=2), BOX)


class TestDeterministicFlow:
    def test_matches_direct_heun(self):
        x0 = EnsembleState.uniform(BOX, 50, seed=8).positions
        H0 = parse_expression("cos(x) + cos(z)")
        out = simulate(EnsembleState(x0), B1.operator, H0, SdeParams(D=0.0, dt=0.01, steps=100), DomainSpec(
            (-100.0,) * 3, (100.0,) * 3, ("reflecting",) * 3))
        np.testing.assert_allclose(out[-1].positions, heun_path(B1.operator, H0, x0, 0.01, 100), atol=1e-13)

    def test_cos_x_conserved_exactly(self):
        # x' = cos z * 0 for B1 with H0 = cos x: x is frozen
        x0 = EnsembleState.uniform(BOX, 100, seed=9).positions
        x1 = heun_path(B1.operator, COS_X, x0, 0.05, 200)
        assert np.max(np.abs(np.cos(x1[:, 0]) - np.cos(x0[:, 0]))) == 0

    def test_energy_error_second_order(self):
        H0 = parse_expression("cos(x) + cos(z)")
        x0 = EnsembleState.uniform(BOX, 100, seed=10).positions
        errs = []
        for dt in (0.02, 0.01, 0.005):
            x1 = heun_path(B1.operator, H0, x0, dt, int(round(10 / dt)))
            errs.append(np.max(np.abs(H0(x1) - H0(x0))))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.8)

    def test_self_convergence_second_order(self):
        H0 = parse_expression("cos(x) + cos(z) + sin(y)")
        x0 = EnsembleState.uniform(BOX, 50, seed=11).positions
        ref = deterministic_rk4(B1.operator, H0, x0, 1e-3, 2000)[-1]
        errs = [np.max(np.abs(heun_path(B1.operator, H0, x0, dt, int(round(2 / dt))) - ref)) for dt in (0.02, 0.01)]
        assert np.log2(errs[0] / errs[1]) >= 1.8

    def test_half_steps_local_error(self):
        # one Heun step vs two half steps: local error O(dt^3)
        s = EnsembleState.uniform(BOX, 200, seed=12)
        diffs = []
        for dt in (0.04, 0.02, 0.01):
            one = step_stratonovich_heun(s, B1.operator, COS_X, SdeParams(D=0.0, gamma=0.5, kappa=1.0, dt=dt), BOX)
            half = SdeParams(D=0.0, gamma=0.5, kappa=1.0, dt=dt / 2)
            two = step_stratonovich_heun(step_stratonovich_heun(s, B1.operator, COS_X, half, BOX),
                                         B1.operator, COS_X, half, BOX)
            diffs.append(np.max(np.abs(one.positions - two.positions)))
        assert np.all(np.log2(np.array(diffs[:-1]) / np.array(diffs[1:])) >= 2.5)


class TestSchemesAgreeInLaw:
    def test_heun_vs_ito_marginal(self):
        s0 = EnsembleState.uniform(BOX, 40_000, seed=13)
        marg = []
        for scheme, seed in (("heun", 13), ("ito-euler", 14)):
            p = SdeParams.h_theorem(1.0, 0.5, dt=0.02, steps=100, seed=seed, scheme=scheme)
            state = EnsembleState(s0.positions, seed=seed)
            final = simulate(state, B1.operator, COS_X, p, BOX, snapshot_stride=100)[-1]
            marg.append(marginal_histogram(final.positions[:, 0], 16, 0.0, 2 * np.pi))
        (edges, p1), (_, p2) = marg
        # two independent 16-bin histograms of 4e4 samples: E[L1] is about 0.036
        assert binned_l1(p1, p2, np.diff(edges)) <= 0.07


class TestExport:
    def snapshots(self):
        s0 = EnsembleState.uniform(BOX, 5, seed=15)
        return simulate(s0, B1.operator, COS_X, SdeParams(dt=0.01, steps=4, seed=15), BOX, 2)

    def test_csv(self, tmp_path):
        snaps = self.snapshots()
        write_csv(snaps, tmp_path / "s.csv")
        data = np.genfromtxt(tmp_path / "s.csv", delimiter=",", names=True)
        assert data.dtype.names == ("t", "particle_id", "x1", "x2", "x3")
        assert len(data) == 15
        np.testing.assert_array_equal(data["x2"][-5:], snaps[-1].positions[:, 1])

    def test_binary_roundtrip(self, tmp_path):
        snaps = self.snapshots()
        write_binary(snaps, tmp_path / "s.bin", stride=2)
        back = read_binary(tmp_path / "s.bin")
        assert (back.N, back.n, back.stride) == (5, 3, 2)
        np.testing.assert_array_equal(back.times, [s.time for s in snaps])
        np.testing.assert_array_equal(back.values, np.stack([s.positions for s in snaps]))

    def test_binary_header_little_endian(self, tmp_path):
        write_binary(self.snapshots(), tmp_path / "s.bin", stride=2)
        raw = (tmp_path / "s.bin").read_bytes()
        assert raw[:8] == b"BELTRAMI"
        assert np.frombuffer(raw[8:40], "<i8").tolist() == [5, 3, 2, 3]

    def test_truncated_binary(self, tmp_path):
        write_binary(self.snapshots(), tmp_path / "s.bin")
        path = tmp_path / "s.bin"
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError, match="truncated"):
            read_binary(path)

    def test_empty_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            write_csv([], tmp_path / "x.csv")
