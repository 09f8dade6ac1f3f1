import math

import numpy as np
import pytest

from core.rng import derive_substream
from services.quantile_service import adapt_rho_m, empirical_quantile
from services.selection_service import alpha_hat, jmax_bound, relaxed_threshold, select_level, varpi
from tests.conftest import CappedHierarchy, make_batch


class TestAlphaHat:
    def test_maximum(self):
        assert alpha_hat(make_batch([0, 0, 0], bounds=[0.1, 0.3, 0.2], top_level=2), 1.0) == pytest.approx(0.3)

    def test_scaling(self):
        assert alpha_hat(make_batch([0, 0, 0], bounds=[0.1, 0.3, 0.2], top_level=2), 2.0) == pytest.approx(0.6)

    def test_high_fidelity_batch(self):
        assert alpha_hat(make_batch([1.0, 2.0], level=2, top_level=2), 1.0) == 0.0


class TestRelaxedThreshold:
    def test_examples(self):
        assert relaxed_threshold(2.0, 0.1, 1.76) == pytest.approx(1.8)
        assert relaxed_threshold(1.5, 0.05, 1.76) == pytest.approx(1.4)

    def test_exact_surrogate(self):
        assert relaxed_threshold(1.2, 0.0, 1.76) == 1.2
        assert relaxed_threshold(2.2, 0.0, 1.76) == 1.76


class TestVarpi:
    def test_example(self):
        assert varpi([0, 0.5, 1.0, 1.5, 2.0], 0.25, 1.0) == pytest.approx(0.2)

    def test_empty_upper_tail(self):
        assert varpi([0.0, 0.1, 0.2], 0.1, 1.0) <= 0

    def test_exact_surrogate_counts(self):
        gen = derive_substream(1, (0,)).generator()
        for _ in range(50):
            m = int(gen.integers(3, 40))
            scores = gen.permutation(m).astype(float)
            t = int(gen.integers(1, m + 1))
            gamma_bar = float(m - t) - 0.5
            assert varpi(scores, 0.0, gamma_bar) == pytest.approx(t / m - 1 / m)

    def test_positive_varpi_certifies_quantile(self):
        gen = derive_substream(2, (0,)).generator()
        checked = 0
        for _ in range(2000):
            m = int(gen.integers(5, 50))
            scores = np.round(gen.normal(size=m), 2)
            alpha = float(gen.uniform(0.0, 0.5))
            gamma_bar = float(gen.normal())
            if varpi(scores, alpha, gamma_bar) > 0:
                rho_low = np.sum(scores >= gamma_bar + alpha) / m
                if rho_low < 1.0:
                    assert empirical_quantile(scores, rho_low) >= gamma_bar + alpha
                    checked += 1
        assert checked > 0


class TestJmaxBound:
    def test_examples(self):
        assert jmax_bound(1.76, 1.0, 0.0, 0.01) == 77
        assert jmax_bound(2.0, 1.0, 0.5, 0.1) == 6

    def test_start_above_target(self):
        assert jmax_bound(1.0, 2.0, 0.0, 0.1) == 1
        assert jmax_bound(1.0, 1.0, 0.0, 0.1) == 1


class TestSelectLevel:
    def _rescore_with(self, hierarchy, calls):
        def rescore(batch, level):
            calls.append(level)
            scores, bounds = hierarchy.evaluate_batch(batch.points, level)
            return batch.rescored(scores, bounds, level)

        return rescore

    def test_exact_surrogate_keeps_level(self):
        hierarchy = CappedHierarchy([None])
        points = np.arange(10, dtype=float).reshape(-1, 1)
        batch = make_batch(points[:, 0], level=1, top_level=2, points=points)
        calls = []
        level, rho, out = select_level(
            batch, 0.5, 0.5, 0.0, lambda a: 7.5, hierarchy, self._rescore_with(hierarchy, calls),
            lambda n, k: pytest.fail("no growth expected"), 1.25, 1000,
        )
        assert level == 1
        assert calls == []
        assert rho == pytest.approx(0.2)
        assert empirical_quantile(out.scores, rho) >= 7.5

    def test_systematic_underestimation_refines(self):
        hierarchy = CappedHierarchy([2.0])
        points = np.linspace(0.0, 9.0, 10).reshape(-1, 1)
        scores, bounds = hierarchy.evaluate_batch(points, 1)
        batch = make_batch(scores, bounds=bounds, level=1, top_level=2, points=points)
        calls = []
        level, rho, out = select_level(
            batch, 0.3, 0.3, math.inf, lambda a: 7.5, hierarchy, self._rescore_with(hierarchy, calls),
            lambda n, k: pytest.fail("no growth expected"), 1.25, 1000,
        )
        assert calls == [2]
        assert level == 2
        assert out.level == 2
        assert empirical_quantile(out.scores, rho) >= 7.5

    def test_error_increase_refines(self):
        hierarchy = CappedHierarchy([5.0])
        points = np.linspace(0.0, 9.0, 10).reshape(-1, 1)
        scores, bounds = hierarchy.evaluate_batch(points, 1)
        batch = make_batch(scores, bounds=bounds, level=1, top_level=2, points=points)
        calls = []
        level, _, _ = select_level(
            batch, 0.5, 0.5, 0.1, lambda a: 1.0, hierarchy, self._rescore_with(hierarchy, calls),
            lambda n, k: pytest.fail("no growth expected"), 1.25, 1000,
        )
        assert calls == [2]
        assert level == 2

    def test_single_level_matches_rho_m_adaptation(self):
        hierarchy = CappedHierarchy([])
        batch = make_batch([0.0, 1.0, 2.0, 3.0], level=1, top_level=1)

        def draw_more(n, k=1):
            return make_batch(np.full(n, 5.0), level=1, top_level=1, points=np.zeros((n, 1)))

        level, rho, out = select_level(
            batch, 0.2, 0.2, 0.0, lambda a: 4.0, hierarchy, lambda b, k: pytest.fail("single level"),
            draw_more, 1.25, 100,
        )
        expected_rho, expected = adapt_rho_m(batch, 0.2, 4.0, 1.25, lambda n: draw_more(n), 100)
        assert level == 1
        assert rho == expected_rho
        np.testing.assert_array_equal(out.scores, expected.scores)
