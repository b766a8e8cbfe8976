"""Tests for the numerical bound checks."""

import math

import numpy as np
import pytest

from contractlab.errors import DomainError, HypothesisError, UnsupportedModelError
from contractlab.models import CurvatureProfile, build_model, gradient_drift
from contractlab.psi_core import contraction_constants, cor1_constants
from contractlab.verify import (
    PROBE_FUNCTIONS,
    InitialLaw,
    check_contraction,
    check_drift_consistency,
    check_gradient,
    check_harnack,
    check_lyapunov_moment,
    check_supermartingale,
    estimate_esm,
    fit_decay_rate,
    harnack_factor,
    laplacian_comparison,
    lyapunov_generator,
    probe_function,
    replay_girsanov,
    search_profile_radius,
)


class TestProbeFunctions:
    """Tests for the named test functions."""

    def test_lookup(self):
        assert probe_function("sin") is PROBE_FUNCTIONS["sin"]

    def test_unknown_name(self):
        with pytest.raises(DomainError, match="unknown test function"):
            probe_function("cosh")

    def test_applied_to_first_coordinate(self):
        f = probe_function("sin")
        values = f(np.array([[0.5, 9.0], [1.0, -3.0]]))
        np.testing.assert_allclose(values, np.sin([0.5, 1.0]))

    def test_exp_clipped_is_bounded(self):
        f = probe_function("exp-clipped")
        assert float(f(np.array([10.0]))[0]) == pytest.approx(math.exp(2.0))
        assert f.bounded_non_negative

    def test_exp_half_unbounded(self):
        assert not probe_function("exp-half").bounded_non_negative


class TestFitDecayRate:
    """Tests for the log-linear rate fit."""

    def test_exact_exponential(self):
        t = [0.0, 1.0, 2.0, 3.0]
        rate, r_squared = fit_decay_rate(t, np.exp(-0.7 * np.array(t)))
        assert rate == pytest.approx(0.7)
        assert r_squared == pytest.approx(1.0)

    def test_too_few_positive_values(self):
        assert fit_decay_rate([0.0, 1.0, 2.0], [1.0, 0.0, 0.0]) == (None, None)


class TestHarnackFactor:
    """Tests for the closed-form Harnack factor."""

    def test_known_exponent(self):
        assert math.log(harnack_factor(0.0, 1.0, 2.0, 1.0, 1.0)) == pytest.approx(0.15652, abs=1e-5)

    def test_tends_to_one_for_close_points(self):
        assert harnack_factor(0.0, 1.0, 2.0, 1e-8, 1.0) == pytest.approx(1.0)

    def test_needs_p_above_one(self):
        with pytest.raises(DomainError):
            harnack_factor(0.0, 1.0, 1.0, 1.0, 1.0)


class TestLaplacianComparison:
    """Tests for the Laplacian comparison constant."""

    def test_flat_limit(self):
        assert laplacian_comparison(0.0, 3, 1.0, 0.5) == pytest.approx(4.0)

    def test_one_dimension_vanishes(self):
        assert laplacian_comparison(2.0, 1, 1.0, 1.0) == 0.0

    def test_curved_value(self):
        expected = math.sqrt(2.0) / math.tanh(math.sqrt(0.5))
        assert laplacian_comparison(1.0, 3, 1.0, 2.0) == pytest.approx(expected)

    def test_small_curvature_approaches_flat(self):
        assert laplacian_comparison(1e-10, 3, 1.0, 0.5) == pytest.approx(4.0, rel=1e-6)

    def test_rejects_negative_curvature(self):
        with pytest.raises(DomainError):
            laplacian_comparison(-1.0, 2, 1.0, 1.0)


class TestLyapunovGenerator:
    """Tests for the drift condition of rho_t(., 0)^2."""

    def test_ou_is_tight(self, ou_model):
        x = np.array([[0.0], [1.0], [2.0]])
        c1, c2 = ou_model.lyapunov
        np.testing.assert_allclose(lyapunov_generator(ou_model, 0.0, x), c1 - c2 * x[:, 0] ** 2)

    def test_forced_ou_below_bound(self, forced_ou_model):
        x = np.linspace(-5.0, 5.0, 41)[:, None]
        c1, c2 = forced_ou_model.lyapunov
        for t in np.linspace(0.0, 2.0 * math.pi, 9):
            assert np.all(lyapunov_generator(forced_ou_model, t, x) <= c1 - c2 * x[:, 0] ** 2 + 1e-12)


class TestCheckContraction:
    """Tests for the coupled-distance comparison."""

    def test_ou_reduced_scale(self, ou_model, ou_profile):
        report = check_contraction(
            ou_model, ou_profile, [0.0], [1.0], 0.0, [0.5, 1.0], 2.0,
            n_paths=400, dt=0.01, seed=1, replicates=0,
        )
        quantities = [row.quantity for row in report.rows if row.t == 1.0]
        assert quantities == ["mean_distance", "moment", "w_tilde", "closed_form_moment", "closed_form_mean"]
        mean_rows = [row for row in report.rows if row.quantity == "mean_distance"]
        assert all(row.passed for row in mean_rows)
        assert mean_rows[-1].estimate == pytest.approx(math.exp(-1.0), abs=0.15)
        assert report.rho_s == 1.0
        assert report.to_dict()["check"] == "contract-check"

    def test_start_time_only(self, ou_model, ou_profile):
        report = check_contraction(ou_model, ou_profile, [0.0], [1.0], 0.0, [0.0], 2.0, n_paths=10, replicates=0)
        first = report.rows[0]
        assert first.estimate == 1.0
        assert first.passed
        assert report.fitted_rate is None

    def test_broken_profile_refused(self, ou_model):
        broken = CurvatureProfile.constant(0.0, 2.0, 0.0, 0.5, 1.0)
        with pytest.raises(HypothesisError) as excinfo:
            check_contraction(ou_model, broken, [0.0], [1.0], 0.0, [1.0], 2.0, n_paths=10)
        assert not excinfo.value.report.passed

    def test_times_before_start_rejected(self, ou_model, ou_profile):
        with pytest.raises(DomainError):
            check_contraction(ou_model, ou_profile, [0.0], [1.0], 1.0, [0.5], 2.0, n_paths=10)

    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_double_well_rate(self, double_well_model, double_well_profile, p):
        report = check_contraction(
            double_well_model, double_well_profile, [-1.0], [1.0], 0.0, [2.0, 5.0, 10.0], p,
            n_paths=1000, dt=0.01, seed=7,
        )
        assert report.passed
        assert report.fitted_rate >= report.rate_floor
        assert all(row.passed for row in report.rows)

    @pytest.mark.slow
    def test_ou_full_scale(self, ou_model, ou_profile):
        report = check_contraction(
            ou_model, ou_profile, [0.0], [1.0], 0.0, [0.5, 1.0, 2.0, 4.0], 2.0,
            n_paths=10_000, dt=0.01, seed=3, replicates=200, threads=4,
        )
        assert report.passed
        assert report.fitted_rate >= report.rate_floor

    @pytest.mark.slow
    @pytest.mark.parametrize("p", [1.0, 2.0])
    def test_double_well_full_scale(self, double_well_model, double_well_profile, p):
        report = check_contraction(
            double_well_model, double_well_profile, [-1.0], [1.0], 0.0, [2.0, 5.0, 10.0], p,
            n_paths=10_000, dt=1e-3, seed=3, replicates=200, threads=4,
        )
        assert report.passed
        assert report.fitted_rate >= report.rate_floor


class TestCheckGradient:
    """Tests for the finite-difference gradient estimate."""

    def test_ou_sin(self, ou_model, ou_profile):
        report = check_gradient(
            ou_model, ou_profile, probe_function("sin"), [0.3], 0.0, [0.5, 1.0], n_paths=2000, seed=2,
        )
        assert report.passed
        assert report.reliable
        # X_1 ~ N(0.3/e, 1 - e^{-2}), so d/dx E sin X_1 = e^{-1} cos(m) e^{-v/2}
        m, v = 0.3 * math.exp(-1.0), -math.expm1(-2.0)
        expected = math.exp(-1.0) * math.cos(m) * math.exp(-v / 2.0)
        assert report.rows[-1].estimate == pytest.approx(expected, abs=0.03)

    def test_constant_function_has_zero_gradient(self, ou_model, ou_profile):
        report = check_gradient(ou_model, ou_profile, probe_function("constant"), [0.0], 0.0, [1.0], n_paths=50)
        assert report.rows[0].estimate == 0.0
        assert report.passed

    def test_closed_form_constants(self, ou_model, ou_profile):
        report = check_gradient(
            ou_model, ou_profile, probe_function("sin"), [0.0], 0.0, [0.5, 1.0, 2.0],
            n_paths=2000, seed=11, use_closed_form=True,
        )
        assert report.constants["c_1"] == cor1_constants(0.0, 1.0, 1.0).prefactor
        assert report.constants["c_1"] == pytest.approx(1.0)
        assert report.constants["lambda"] == pytest.approx(0.5)
        assert [row.t for row in report.rows] == [0.5, 1.0, 2.0]
        for row in report.rows:
            assert row.bound == pytest.approx(math.exp(-row.t / 2.0))
        assert report.passed

    def test_unbounded_derivative_rejected(self, ou_model, ou_profile):
        with pytest.raises(DomainError):
            check_gradient(ou_model, ou_profile, probe_function("exp-half"), [0.0], 0.0, [1.0], n_paths=10)

    def test_non_positive_step_rejected(self, ou_model, ou_profile):
        with pytest.raises(DomainError):
            check_gradient(ou_model, ou_profile, probe_function("sin"), [0.0], 0.0, [1.0], h=0.0, n_paths=10)


class TestCheckHarnack:
    """Tests for the dimension-free Harnack inequality."""

    def test_closed_form_for_exponential(self, ou_model):
        report = check_harnack(
            ou_model, None, None, 2.0, [0.0], [1.0], 0.0, 1.0, probe_function("exp-half"),
            n_paths=2000, seed=5,
        )
        assert report.method == "closed_form"
        assert report.factor == pytest.approx(harnack_factor(0.0, 1.0, 2.0, 1.0, 1.0))
        assert report.row.passed
        assert report.replay["coupled_fraction"] == 1.0
        assert report.replay["mean_r_pass"]

    def test_monte_carlo_for_bounded_function(self, ou_model):
        report = check_harnack(
            ou_model, 0.0, 1.0, 2.0, [0.0], [1.0], 0.0, 1.0, probe_function("shifted-sin"),
            n_paths=1000, seed=6, replay=False,
        )
        assert report.method == "monte_carlo"
        assert report.passed
        assert report.replay == {}

    def test_needs_p_above_one(self, ou_model):
        with pytest.raises(DomainError):
            check_harnack(ou_model, None, None, 1.0, [0.0], [1.0], 0.0, 1.0, probe_function("sin"), n_paths=10)

    def test_needs_linear_bound(self, double_well_model):
        with pytest.raises(DomainError, match="linear index bound"):
            check_harnack(
                double_well_model, None, None, 2.0, [0.0], [1.0], 0.0, 1.0, probe_function("sin"), n_paths=10,
            )

    def test_replay_for_coincident_points(self, ou_model):
        record = replay_girsanov(ou_model, 0.0, 1.0, 2.0, [0.5], [0.5], 0.0, 1.0, n_paths=10)
        assert record["pass"]
        assert record["bound"] == 1.0


class TestInitialLaw:
    """Tests for initial laws of the ESM experiment."""

    def test_point_mass(self):
        samples = InitialLaw("point", (2.0,)).sample(5, 2, seed=0)
        np.testing.assert_array_equal(samples, np.full((5, 2), 2.0))

    def test_uniform_inside_box(self):
        samples = InitialLaw("uniform", (-1.0, 1.0)).sample(100, 1, seed=0)
        assert samples.min() >= -1.0 and samples.max() <= 1.0

    def test_deterministic_given_seed(self):
        law = InitialLaw("normal", (0.0, 1.0))
        np.testing.assert_array_equal(law.sample(4, 1, seed=3), law.sample(4, 1, seed=3))

    def test_unknown_kind(self):
        with pytest.raises(DomainError):
            InitialLaw("cauchy", (0.0, 1.0))

    def test_wrong_parameter_count(self):
        with pytest.raises(DomainError):
            InitialLaw("point", (0.0, 1.0))


class TestEstimateEsm:
    """Tests for pull-back convergence to the evolution system of measures."""

    def test_forced_ou_gaps_decay(self, forced_ou_model):
        report = estimate_esm(
            forced_ou_model, 0.0, [-1.0, -2.0, -4.0],
            InitialLaw("point", (0.0,)), InitialLaw("point", (3.0,)),
            n_paths=300, dt=0.01, seed=8,
        )
        assert report.start_times == [-1.0, -2.0, -4.0]
        assert report.gaps[0] > report.gaps[1] > report.gaps[2] > 0
        # common noise makes the gap deterministic: 3 (1 - dt)^n
        assert report.gaps[0] == pytest.approx(3.0 * 0.99**100, rel=1e-9)
        assert report.fitted_rate == pytest.approx(1.0, abs=0.02)
        assert report.passed

    def test_stationary_law_matches(self, forced_ou_model):
        report = estimate_esm(
            forced_ou_model, 1.0, [-3.0, -6.0],
            InitialLaw("normal", (0.0, 1.0)), InitialLaw("uniform", (-2.0, 2.0)),
            n_paths=500, dt=0.01, seed=9,
        )
        assert [row.quantity for row in report.law_rows] == ["esm_mean", "esm_second_moment"]
        assert all(row.passed for row in report.law_rows)

    def test_time_homogeneous_model_rejected(self, ou_model):
        with pytest.raises(DomainError):
            estimate_esm(ou_model, 0.0, [-1.0], InitialLaw("point", (0.0,)), InitialLaw("point", (1.0,)), 10)

    def test_start_times_must_decrease(self, forced_ou_model):
        with pytest.raises(DomainError):
            estimate_esm(
                forced_ou_model, 0.0, [-2.0, -1.0], InitialLaw("point", (0.0,)), InitialLaw("point", (1.0,)), 10,
            )


class TestLyapunovMoment:
    """Tests for the uniform second-moment bound."""

    def test_ou_within_bound(self, ou_model):
        report = check_lyapunov_moment(ou_model, 1.0, [0.0, -2.0], n_paths=500, seed=1)
        assert report.bound == pytest.approx(1.0)
        assert report.passed
        assert report.drift_excess <= 1e-9

    def test_forced_ou_ratio(self, forced_ou_model):
        report = check_lyapunov_moment(forced_ou_model, 0.0, [-3.0], n_paths=500, seed=2)
        assert report.bound == pytest.approx(3.0)
        assert report.passed

    def test_model_without_constants(self, double_well_model):
        with pytest.raises(UnsupportedModelError):
            check_lyapunov_moment(double_well_model, 1.0, [0.0], n_paths=10)


class TestSupermartingale:
    """Tests for the decay of E psi(r_t^p) along the radial process."""

    def test_ou_profile(self, ou_profile):
        report = check_supermartingale(ou_profile, 2.0, 1.0, [0.5, 1.0], n_paths=500, seed=4)
        assert report.lam == pytest.approx(contraction_constants(ou_profile, 2.0).lam)
        assert report.passed


class TestDriftConsistency:
    """Tests for the finite-difference check of supplied derivatives."""

    def test_builtin_potentials_consistent(self, ou_model, double_well_model):
        points = np.linspace(-2.0, 2.0, 9)[:, None]
        for model in (ou_model, double_well_model):
            report = check_drift_consistency(model, points)
            assert report.passed
            assert report.hessian_error is not None

    def test_quartic_in_two_dimensions(self):
        model = build_model("quartic", a=1.0)
        points = np.random.default_rng(0).uniform(-1.5, 1.5, (10, 2))
        assert check_drift_consistency(model, points).passed

    def test_wrong_gradient_detected(self):
        model = gradient_drift(
            potential=lambda x: np.sum(x**2, axis=-1),
            gradient=lambda x: x,
            dim=1,
        )
        report = check_drift_consistency(model, np.array([[1.0], [2.0]]))
        assert not report.passed
        assert report.hessian_error is None

    def test_model_without_potential(self, forced_ou_model):
        with pytest.raises(UnsupportedModelError):
            check_drift_consistency(forced_ou_model, np.zeros((1, 1)))


class TestSearchProfileRadius:
    """Tests for choosing r0 and k3."""

    def test_picks_best_admissible_radius(self):
        search = search_profile_radius(lambda r: np.asarray(r), 0.25, 2.0, [1.0, 3.0, 4.0, 6.0])
        radii = [r0 for r0, _, _ in search.candidates]
        assert 1.0 not in radii
        assert all(k3 > 0 for _, k3, _ in search.candidates)
        assert search.lam == max(lam for _, _, lam in search.candidates)
        assert search.best.r0 in radii

    def test_no_admissible_radius(self):
        with pytest.raises(DomainError):
            search_profile_radius(lambda r: np.asarray(r), 0.25, 2.0, [0.5, 1.0])
