import numpy as np
import pytest

from carcheck.coarsening import build_joint, car_data_density
from carcheck.dist_core import BaseSpace, Density, SpaceMismatchError, kl_divergence, sample_density
from carcheck.factorize import (
    ProjectionOptions,
    car_factorize,
    em_step,
    fit_polar_ml,
    kl_project,
    smooth_target,
)
from carcheck.mechanisms import current_status, missing_data, right_censored, subset_coarsening
from carcheck.polar import sample_polar_point

AB = BaseSpace(["a", "b"], [0.5, 0.5])
CS3_WITNESS = np.array([1.0, 1.0, 0.0, 3.0, 1.0])


class TestOptions:
    @pytest.mark.parametrize("kw", [{"tol": 0}, {"max_iter": 0}, {"floor": 1.0}, {"kkt_tol": -1}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            ProjectionOptions(**kw)


class TestEMStep:
    def test_missing_hand_computation(self):
        # S(1) = 1, so S*(f)(a) = (1.2 + 1.2)/2 and S*(f)(b) = (0.4 + 1.2)/2
        j = missing_data(AB)
        h = em_step(j, Density(j.x_space, [1.2, 0.4, 1.2]), Density(j.y_space, [1, 1]))
        np.testing.assert_allclose(h.values, [1.2, 0.8], atol=1e-15)

    def test_fixed_point(self):
        j = current_status(4)
        h0 = sample_density(j.y_space, 3)
        f = Density(j.x_space, j.forward(h0.values))
        np.testing.assert_allclose(em_step(j, f, h0).values, h0.values, atol=1e-14)

    def test_space_mismatch(self):
        j = missing_data(AB)
        with pytest.raises(SpaceMismatchError):
            em_step(j, Density(j.x_space, [1, 1, 1]), Density(BaseSpace.uniform(3), [1, 1, 1]))

    def test_monotone_and_normalized(self):
        models = [current_status(4), right_censored(4), subset_coarsening(3), missing_data(AB)]
        for s in range(100):
            j = models[s % 4]
            f = sample_density(j.x_space, s)
            h = Density(j.y_space, np.ones(len(j.y_space)))
            prev = kl_divergence(f, Density(j.x_space, j.forward(h.values)))
            for _ in range(30):
                h = em_step(j, f, h)
                assert abs(j.y_space.integrate(h.values) - 1) <= 1e-12
                cur = kl_divergence(f, Density(j.x_space, j.forward(h.values)))
                assert cur <= prev + 1e-12
                prev = cur


class TestProject:
    def test_uniform_target(self):
        j = current_status(5)
        r = kl_project(j, Density(j.x_space, np.ones(len(j.x_space))))
        assert r.kl_value == pytest.approx(0.0, abs=1e-15)
        np.testing.assert_allclose(j.forward(r.h_star.values), 1.0, atol=1e-12)

    def test_image_target(self):
        j = right_censored(5)
        for s in range(10):
            f = Density(j.x_space, j.forward(sample_density(j.y_space, s).values))
            assert kl_project(j, f).kl_value < 1e-10

    def test_mixture_with_witness_stays_in_M(self):
        # 0.9 + 0.1 S((1,-1,3)) = S((1, 0.8, 1.2)) is itself an image
        j = current_status(3)
        r = kl_project(j, Density(j.x_space, 0.9 + 0.1 * CS3_WITNESS))
        assert r.kl_value < 1e-12
        np.testing.assert_allclose(r.h_star.values, [1.0, 0.8, 1.2], atol=1e-6)

    def test_rejects_zero_target(self):
        j = current_status(3)
        with pytest.raises(ValueError):
            kl_project(j, Density(j.x_space, CS3_WITNESS))

    def test_iteration_cap(self):
        j = current_status(3)
        f, _ = smooth_target(Density(j.x_space, CS3_WITNESS), 0.01)
        r = kl_project(j, f, ProjectionOptions(max_iter=3))
        assert not r.converged and r.iterations == 3

    def test_trace_is_monotone(self):
        j = subset_coarsening(3)
        r = kl_project(j, sample_density(j.x_space, 1), record=True)
        assert len(r.trace) == r.iterations + 1
        assert np.all(np.diff(r.trace) <= 1e-12)


class TestFactorize:
    def test_missing_example(self):
        j = missing_data(AB)
        rep = car_factorize(j, Density(j.x_space, [1.2, 0.4, 1.2]))
        assert rep.compatible
        np.testing.assert_allclose(rep.h_star.values, [1.5, 0.5], atol=1e-10)
        np.testing.assert_allclose(rep.g_star, [0.8, 0.8, 1.2], atol=1e-10)

    def test_constant_target(self):
        j = subset_coarsening(3)
        rep = car_factorize(j, Density(j.x_space, np.ones(7)))
        assert rep.compatible
        np.testing.assert_allclose(rep.g_star, 1.0, atol=1e-12)

    def test_smoothed_witness_residual(self):
        j = current_status(3)
        f = Density(j.x_space, 0.99 * CS3_WITNESS + 0.01)
        rep = car_factorize(j, f)
        assert rep.verdict == "projection_residual"
        # regression constant from the first converged run
        assert rep.kl_value == pytest.approx(0.0784032092, abs=1e-9)
        assert rep.slack.min() >= -1e-8
        active = rep.h_star.values > 1e-6
        assert np.all(np.abs(rep.slack[active]) <= 1e-8)

    def test_kkt_invariants(self):
        for s in range(30):
            j = [current_status(5), right_censored(5)][s % 2]
            f = sample_density(j.x_space, s)
            rep = car_factorize(j, f)
            np.testing.assert_allclose(f.values, rep.g_star * rep.k_star.values, atol=1e-10)
            assert rep.slack.min() >= -1e-6
            assert np.all(np.abs(rep.slack[rep.h_star.values > 1e-6]) <= 1e-6)

    def test_car_targets_have_no_divergence(self):
        j = current_status(5)
        for s in range(10):
            f = car_data_density(j, sample_density(j.y_space, s), sample_polar_point(j, s))
            rep = car_factorize(j, f)
            assert rep.car_divergence < 1e-9

    def test_report_serializes(self):
        j = missing_data(AB)
        d = car_factorize(j, Density(j.x_space, [1.2, 0.4, 1.2])).to_dict()
        assert d["verdict"] == "compatible" and d["x_labels"][-1] == "†"


class TestPolarFit:
    def test_feasible_and_optimal(self):
        j = current_status(4)
        f = sample_density(j.x_space, 5).values
        g = fit_polar_ml(j, f)
        assert np.max(np.abs(j.adjoint(g) - 1)) < 1e-12
        best = np.sum(j.p0 * f * np.log(g))
        for s in range(50):
            other = sample_polar_point(j, s)
            assert np.sum(j.p0 * f * np.log(other)) <= best + 1e-12


class TestBruteForce:
    def test_grid_oracle(self):
        rng = np.random.default_rng(31)
        lattice = np.array([[i, k, 200 - i - k] for i in range(201) for k in range(201 - i)]) / 200
        for _ in range(5):
            j = build_joint(rng.exponential(size=(3, 3)), list("abc"), list("uvw"))
            f = sample_density(j.x_space, int(rng.integers(1 << 30)))
            H = lattice / j.q0
            K = H @ j.s_matrix.T
            with np.errstate(divide="ignore"):
                vals = np.sum(j.p0 * f.values * np.log(f.values / K), axis=1)
            assert abs(kl_project(j, f).kl_value - vals.min()) <= 2e-3


class TestSmoothing:
    def test_reports_shift(self):
        j = current_status(3)
        f, moved = smooth_target(Density(j.x_space, CS3_WITNESS), 0.01)
        assert f.values.min() > 0
        assert moved == pytest.approx(0.01 * np.dot(j.p0, np.abs(CS3_WITNESS - 1)), abs=1e-15)
