"""Tests for the Gauss-Legendre helpers."""

import math

import numpy as np
import pytest

from contractlab.errors import QuadratureError
from contractlab.quadrature import (
    adaptive_cumulative,
    composite_gauss_legendre,
    gauss_legendre,
    legendre_rule,
)


class TestLegendreRule:
    """Tests for the cached rule on [0, 1]."""

    def test_weights_sum_to_one(self):
        _, weights = legendre_rule(16)
        assert weights.sum() == pytest.approx(1.0, abs=1e-14)

    def test_nodes_inside_unit_interval(self):
        nodes, _ = legendre_rule(8)
        assert np.all((nodes > 0) & (nodes < 1))

    def test_rule_is_read_only(self):
        nodes, _ = legendre_rule(4)
        with pytest.raises(ValueError):
            nodes[0] = 0.0


class TestGaussLegendre:
    """Tests for single-panel integration."""

    def test_exact_for_polynomials(self):
        value = gauss_legendre(lambda x: x**5, np.array([0.0]), np.array([2.0]), n=4)
        assert value[0] == pytest.approx(64.0 / 6.0, rel=1e-13)

    def test_vectorized_over_intervals(self):
        a = np.array([0.0, 1.0, 2.0])
        b = a + 1.0
        values = gauss_legendre(np.exp, a, b)
        expected = np.exp(b) - np.exp(a)
        np.testing.assert_allclose(values, expected, rtol=1e-13)


class TestCompositeGaussLegendre:
    """Tests for the doubling composite rule."""

    def test_smooth_integrand(self):
        value = composite_gauss_legendre(np.sin, 0.0, math.pi)
        assert float(value) == pytest.approx(2.0, abs=1e-12)

    def test_vector_valued_integrand(self):
        value = composite_gauss_legendre(lambda x: np.stack([x, x**2], axis=-1), 0.0, 1.0)
        np.testing.assert_allclose(value, [0.5, 1.0 / 3.0], rtol=1e-12)

    def test_non_convergence_raises(self):
        rng = np.random.default_rng(0)
        with pytest.raises(QuadratureError) as excinfo:
            composite_gauss_legendre(lambda x: rng.standard_normal(x.shape), 0.0, 1.0, tol=1e-14)
        assert excinfo.value.achieved > 0


class TestAdaptiveCumulative:
    """Tests for per-interval adaptive integration."""

    def test_pieces_sum_to_total(self):
        edges = np.array([0.0, 0.5, 1.0, 3.0])
        pieces = adaptive_cumulative(np.exp, edges, 1e-12)
        np.testing.assert_allclose(pieces, np.diff(np.exp(edges)), rtol=1e-11)

    def test_long_interval_refined(self):
        edges = np.array([0.0, 100.0])
        pieces = adaptive_cumulative(lambda x: 1.0 / (1.0 + x * x), edges, 1e-10)
        assert pieces[0] == pytest.approx(math.atan(100.0), abs=1e-9)

    def test_empty_span(self):
        assert adaptive_cumulative(np.exp, np.array([1.0, 1.0]), 1e-9).tolist() == [0.0]
