import numpy as np
import pytest

from core.errors import InvalidParameterError
from core.hierarchy import certified_bound_violations
from models.analytic_model import AnalyticHierarchy, LinearGaussianProblem, analytic_probability, eval_level
from services.family_service import GaussianParams


class TestLinearGaussianProblem:
    def test_tail_probability(self, linear_problem):
        assert analytic_probability(linear_problem) == pytest.approx(3.1671e-5, rel=1e-4)

    def test_tail_probability_scaled_direction(self, mu3):
        problem = LinearGaussianProblem(w=np.array([2.0, 0.0, 0.0]), mu_params=mu3, gamma_star=8.0)
        assert analytic_probability(problem) == pytest.approx(3.1671e-5, rel=1e-4)

    def test_shifted_mean(self):
        mu = GaussianParams(mean=np.array([1.0]), covariance=np.eye(1))
        problem = LinearGaussianProblem(w=np.array([1.0]), mu_params=mu, gamma_star=1.0)
        assert analytic_probability(problem) == pytest.approx(0.5)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"w": np.zeros(3)},
            {"w": np.ones(2)},
            {"alphas": (0.1, 0.4)},
            {"alphas": (0.0,)},
        ],
    )
    def test_rejects_invalid(self, mu3, kwargs):
        args = {"w": np.array([1.0, 0.0, 0.0]), "mu_params": mu3, "gamma_star": 4.0}
        args.update(kwargs)
        with pytest.raises(InvalidParameterError):
            LinearGaussianProblem(**args)


class TestEvalLevel:
    def test_top_level_is_exact(self, linear_problem):
        assert eval_level(linear_problem, [1.5, 2.0, 3.0], 3) == (1.5, 0.0)

    def test_surrogate_perturbation(self, linear_problem):
        x = np.array([0.5, 0.2, -0.1])
        score, bound = eval_level(linear_problem, x, 1)
        assert score == pytest.approx(0.5 + 0.4 * np.cos(0.6))
        assert bound == 0.4

    def test_level_out_of_range(self, linear_problem):
        with pytest.raises(InvalidParameterError):
            eval_level(linear_problem, np.zeros(3), 4)


class TestAnalyticHierarchy:
    def test_labels(self, linear_hierarchy):
        assert linear_hierarchy.labels() == ("1", "2", "hifi")

    def test_custom_cost_ranks(self, linear_problem):
        assert AnalyticHierarchy(linear_problem, cost_ranks=(4, 8, 16)).labels() == ("4", "8", "hifi")
        with pytest.raises(InvalidParameterError):
            AnalyticHierarchy(linear_problem, cost_ranks=(4, 4, 16))

    def test_bounds_are_certified(self, linear_hierarchy):
        points = np.random.default_rng(0).standard_normal((500, 3)) * 3
        assert certified_bound_violations(linear_hierarchy, points) == 0
