"""Tests for psi and the contraction constants."""

import math

import numpy as np
import pytest

from contractlab.errors import DomainError
from contractlab.models import CurvatureProfile, linear_bound_profile
from contractlab.psi_core import (
    CutoffFunction,
    build_psi,
    build_psi_tables,
    chained_w1_factor,
    contraction_constants,
    cor1_constants,
    closed_form_mean_bound,
    cutoff_sigma,
    ell_functions,
    lemma1_residuals,
    mean_distance_bound,
    moment_bound,
    profile_exponent,
)

PROFILE_FIXTURES = ["ou_profile", "unit_profile", "double_well_profile"]


class TestCutoff:
    """Tests for the C^1 cutoff sigma."""

    def test_one_below_radius(self):
        value, derivative = cutoff_sigma(1.0, np.array([0.0, 0.5, 1.0]))
        np.testing.assert_array_equal(value, [1.0, 1.0, 1.0])
        np.testing.assert_array_equal(derivative, [0.0, 0.0, 0.0])

    def test_zero_beyond_unit_band(self):
        value, derivative = cutoff_sigma(1.0, np.array([2.0, 5.0]))
        np.testing.assert_array_equal(value, [0.0, 0.0])
        np.testing.assert_array_equal(derivative, [0.0, 0.0])

    def test_midpoint(self):
        cutoff = CutoffFunction(1.0)
        assert float(cutoff(1.5)) == pytest.approx(0.5)
        assert float(cutoff.derivative(1.5)) == pytest.approx(-1.5)

    def test_rejects_bad_arguments(self):
        with pytest.raises(DomainError):
            cutoff_sigma(0.0, 1.0)
        with pytest.raises(DomainError):
            cutoff_sigma(1.0, -0.1)


class TestEllFunctions:
    """Tests for the coefficients of the Ito expansion."""

    def test_head_drift_is_linear(self, unit_profile):
        r = np.array([0.1, 0.5])
        _, _, ell = ell_functions(unit_profile, 2.0, r)
        np.testing.assert_allclose(ell, 2.0 * 2.0 * r)

    def test_l0_below_radius(self, unit_profile):
        l0, _, _ = ell_functions(unit_profile, 2.0, np.array([0.25]))
        assert float(l0[0]) == pytest.approx(16.0 * 0.25)

    def test_rejects_non_positive(self, unit_profile):
        with pytest.raises(DomainError):
            ell_functions(unit_profile, 2.0, np.array([0.0]))

    def test_rejects_p_below_one(self, unit_profile):
        with pytest.raises(DomainError):
            ell_functions(unit_profile, 0.5, np.array([1.0]))


class TestContractionConstants:
    """Tests for c_p, lambda and the closed-form constants."""

    def test_cor1_reproduces_closed_form(self):
        constants = cor1_constants(1.0, 2.0, 2.0)
        assert constants.prefactor == pytest.approx(math.sqrt(2.0) * math.exp(0.25), rel=1e-12)
        assert constants.lam == pytest.approx(math.exp(-0.5), rel=1e-12)
        assert constants.rate == pytest.approx(math.exp(-0.5) / 2.0, rel=1e-12)

    def test_cor1_agrees_with_induced_profile(self):
        for k1, k2, p in [(1.0, 2.0, 2.0), (0.5, 1.0, 1.0), (2.0, 3.0, 4.0)]:
            closed = cor1_constants(k1, k2, p)
            general = contraction_constants(linear_bound_profile(k1, k2), p)
            assert general.c_p == pytest.approx(closed.prefactor, rel=1e-12)
            assert general.lam == pytest.approx(closed.lam, rel=1e-12)

    def test_unit_profile_value(self, unit_profile):
        c_p, lam, _ = contraction_constants(unit_profile, 2.0)
        assert c_p == pytest.approx(1.8159, abs=1e-4)
        assert lam == pytest.approx(math.exp(-0.5))

    def test_double_well_rate(self, double_well_profile):
        assert profile_exponent(double_well_profile) == pytest.approx(3.0)
        assert contraction_constants(double_well_profile, 1.0).lam == pytest.approx(math.exp(-3.0))

    def test_c1_is_exp_of_exponent(self, ou_profile):
        assert contraction_constants(ou_profile, 1.0).c_p == pytest.approx(math.exp(1.0 / 32.0))

    def test_uniform_constant_dominates(self, double_well_profile):
        for p in (1.0, 2.0, 4.0, 16.0):
            c_p, _, uniform = contraction_constants(double_well_profile, p)
            assert c_p <= uniform

    def test_cor1_domain(self):
        with pytest.raises(DomainError):
            cor1_constants(-1.0, 1.0, 2.0)
        with pytest.raises(DomainError):
            cor1_constants(1.0, 0.0, 2.0)


class TestBounds:
    """Tests for the derived distance bounds."""

    def test_moment_bound_at_start_time(self, unit_profile):
        c_p = contraction_constants(unit_profile, 2.0).c_p
        assert moment_bound(unit_profile, 2.0, 0.25, 0.0) == pytest.approx(c_p * 0.5)
        assert moment_bound(unit_profile, 2.0, 0.25, 0.0) >= 0.25

    def test_mean_bound_decays(self, ou_profile):
        early = mean_distance_bound(ou_profile, 1.0, 0.5)
        late = mean_distance_bound(ou_profile, 1.0, 2.0)
        assert late < early

    def test_closed_form_mean_bound(self):
        assert closed_form_mean_bound(0.0, 1.0, 1.0, 1.0) == pytest.approx(math.exp(-0.5))

    def test_chained_factor_multiplies(self, ou_profile, unit_profile):
        c_a, lam_a, _ = contraction_constants(ou_profile, 1.0)
        c_b, lam_b, _ = contraction_constants(unit_profile, 1.0)
        factor = chained_w1_factor([(ou_profile, 1.0), (unit_profile, 2.0)])
        assert factor == pytest.approx(c_a * c_b * math.exp(-lam_a - 2.0 * lam_b))

    def test_chained_factor_rejects_negative_duration(self, ou_profile):
        with pytest.raises(DomainError):
            chained_w1_factor([(ou_profile, -1.0)])


class TestBuildPsi:
    """Tests for tabulating psi."""

    def test_tail_derivative(self, unit_profile):
        table = build_psi(unit_profile, 2.0, grid=[0.5, 1.0, 4.0])
        assert table.psi_prime[-1] == pytest.approx(0.5, rel=1e-12)

    def test_default_grid_size(self, unit_profile):
        table = build_psi(unit_profile, 2.0)
        assert len(table.rows()) == 400

    def test_call_matches_grid(self, double_well_profile):
        table = build_psi(double_well_profile, 2.0)
        np.testing.assert_allclose(table(table.grid), table.psi, rtol=1e-9)

    def test_psi_vanishes_at_zero(self, unit_profile):
        table = build_psi(unit_profile, 2.0)
        assert float(table(np.array([0.0]))[0]) == 0.0

    def test_psi_continuous_at_knee(self, unit_profile):
        table = build_psi(unit_profile, 2.0)
        below, above = table(np.array([table.knee * (1 - 1e-9), table.knee * (1 + 1e-9)]))
        assert above == pytest.approx(below, rel=1e-7)

    def test_call_rejects_negative(self, unit_profile):
        table = build_psi(unit_profile, 2.0)
        with pytest.raises(DomainError):
            table(np.array([-1.0]))

    def test_rejects_bad_grid(self, unit_profile):
        with pytest.raises(DomainError):
            build_psi(unit_profile, 2.0, grid=[1.0, 0.5])

    def test_rejects_bad_tolerance(self, unit_profile):
        with pytest.raises(DomainError):
            build_psi(unit_profile, 2.0, tol=0.0)

    def test_threaded_tables_identical(self, ou_profile, unit_profile):
        jobs = [(ou_profile, 2.0), (unit_profile, 4.0)]
        serial = build_psi_tables(jobs)
        threaded = build_psi_tables(jobs, threads=2)
        for a, b in zip(serial, threaded):
            np.testing.assert_array_equal(a.psi, b.psi)


class TestLemmaResiduals:
    """psi properties on the three reference profiles."""

    @pytest.mark.parametrize("fixture", PROFILE_FIXTURES)
    @pytest.mark.parametrize("p", [1.0, 2.0, 4.0])
    def test_properties_hold(self, request, fixture, p):
        profile = request.getfixturevalue(fixture)
        residuals = lemma1_residuals(build_psi(profile, p, tol=1e-9))
        assert residuals.ode_residual <= 1e-6
        assert residuals.pinching_violation <= 1e-10
        assert residuals.drift_margin >= -1e-8
        assert residuals.monotone
        assert residuals.concave
        assert residuals.passes()

    def test_strict_concavity_for_p_above_one(self, ou_profile):
        table = build_psi(ou_profile, 2.0)
        assert np.all(table.psi_double_prime < 0)

    def test_flat_head_for_p_one_and_zero_k1(self, ou_profile):
        table = build_psi(ou_profile, 1.0)
        assert np.all(table.psi_double_prime <= 0)
        assert np.allclose(table.psi_double_prime, 0.0)

    def test_constants_pinch_psi(self):
        profile = CurvatureProfile.constant(0.5, 1.0, 0.0, 1.0, 1.0)
        table = build_psi(profile, 2.0)
        root = np.sqrt(table.grid)
        assert np.all(table.psi >= table.constants.c1_tilde * root * (1 - 1e-10))
        assert np.all(table.psi <= table.constants.c2_tilde * root * (1 + 1e-10))
